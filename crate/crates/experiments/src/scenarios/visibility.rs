//! Visibility-gated sampling on a voxel scene.
//!
//! Every occupied voxel carries its own copy of the 2D toy state; the
//! observation branch and the relaxed prior act blockwise and the gate of
//! voxel `i` at step `k` is `(1 - m_i) alpha_k`.
//!
//! The built-in scene is a back slab partly hidden by a smaller occluder
//! plate, viewed head-on. A scene file (`scene.path`) replaces it.
//!
//! Rows per seed and relaxation strength:
//!
//! - `visible_deviation`: largest `|v - v_obs|` over fully visible voxels
//!   and all steps (must be exactly 0);
//! - `weight_mismatch`: voxels whose weight differs from a brute-force
//!   recomputation (pairwise depth comparison over the dilation window, no
//!   depth map);
//! - `blend_mismatch`: velocity entries that differ bitwise from the blend
//!   recomputed with those brute-force weights;
//! - `unoccluded_weights_below_one`, `unoccluded_difference`: the scene
//!   without its occluder (built-in scene) or with unit weights (scene
//!   file) has every weight 1, and the gated run then equals
//!   observation-only integration exactly;
//! - `visible_voxels`, `occluded_voxels` (weight below 1/2).
//!
//! Variant `probe` places one voxel directly behind another with
//! `beta = resolution / 2`, so its margin is exactly `2 sigma_d`; row
//! `two_sigma_gate` is its step-0 gate `(1 - m) alpha_0`.

use std::sync::Arc;

use flowlab::flowfield::{BlockField, FieldRole, NoiseSpec};
use flowlab::sampler::{initial_states, integrate};
use flowlab::visibility::{
    compute_visibility, project, voxel_to_camera, Camera, Scene, VisibilityParams, VisibilityWeights, VoxelGrid,
};
use flowlab::{BranchPair, Mode, Trajectory, VelocityField};
use nalgebra::{Matrix3, Vector3};

use super::{
    analytic, at, derive_seed, file_stem, for_each_seed, relax_over_schedule, relaxed_prior, make_schedule, sigma_label,
    SeedOutput, Stream, TRAJECTORY_SEEDS,
};
use crate::config::{ExperimentConfig, SceneSpec};
use crate::report::{Check, Outcome, Relation, Series};
use crate::ExperimentError;

pub const PROBE: &str = "probe";
pub const GATE_TOL: f64 = 1e-12;

/// Head-on camera for a `res^3` grid: object centred on the optical axis at
/// depth `3 res`, roughly one pixel per voxel.
pub fn builtin_camera(res: usize) -> Result<Camera, ExperimentError> {
    let r = res as f64;
    let side = res + 8;
    Camera::new(
        [3.0 * r, 3.0 * r, side as f64 / 2.0, side as f64 / 2.0],
        Matrix3::identity(),
        Vector3::repeat(1.0),
        Vector3::new(-r / 2.0, -r / 2.0, 3.0 * r),
        (side, side),
    )
    .map_err(at("visibility", "Camera::new"))
}

/// Back slab at depth index `res - 3` and, with the occluder, a centred
/// plate covering the middle half of each axis at depth index 2.
pub fn builtin_grid(res: usize, with_occluder: bool) -> Result<VoxelGrid, ExperimentError> {
    let mut occupied = Vec::new();
    for x in 0..res {
        for y in 0..res {
            occupied.push([x, y, res - 3]);
        }
    }
    if with_occluder {
        for x in res / 4..3 * res / 4 {
            for y in res / 4..3 * res / 4 {
                occupied.push([x, y, 2]);
            }
        }
    }
    VoxelGrid::new(res, occupied).map_err(at("visibility", "VoxelGrid::new"))
}

fn params(spec: &SceneSpec) -> VisibilityParams {
    VisibilityParams {
        beta: spec.beta,
        gamma: spec.gamma,
        lambda: spec.lambda,
        kernel: None,
    }
}

/// Weights by direct comparison of every voxel pair: a voxel's reference
/// depth is the smallest depth among in-front, in-frame voxels whose pixel
/// lies in its `k x k` window.
pub fn brute_force_weights(grid: &VoxelGrid, camera: &Camera, kernel: usize, sigma_d: f64, lambda: f64) -> Vec<f64> {
    let placed: Vec<Option<(i64, i64, f64)>> = grid
        .occupied()
        .iter()
        .map(|&c| {
            let x = voxel_to_camera(c, grid.resolution(), camera).ok()?;
            if !(x.z > 0.0) {
                return None;
            }
            let (u, v) = project(&x, camera).ok()?;
            let (pu, pv) = (u.round(), v.round());
            let inside = pu >= 0.0 && pv >= 0.0 && pu < camera.width() as f64 && pv < camera.height() as f64;
            inside.then_some((pu as i64, pv as i64, x.z))
        })
        .collect();
    let r = (kernel / 2) as i64;
    placed
        .iter()
        .map(|p| {
            let Some((u, v, z)) = *p else { return 1.0 };
            let front = placed
                .iter()
                .flatten()
                .filter(|(qu, qv, _)| (qu - u).abs() <= r && (qv - v).abs() <= r)
                .map(|(_, _, qz)| *qz)
                .fold(f64::INFINITY, f64::min);
            let d = (z - front).max(0.0) / sigma_d;
            (-lambda * d * d).exp().max(f64::MIN_POSITIVE)
        })
        .collect()
}

/// Entries of the recorded blended velocities that differ from
/// `v_obs + (1 - m_i) alpha_k (v_prior - v_obs)` evaluated from the telemetry.
pub fn blend_mismatches(traj: &Trajectory, weights: &[f64]) -> usize {
    let block = traj.states[0].len() / weights.len();
    let mut bad = 0;
    for k in 0..traj.steps() {
        let alpha = traj.alphas[k];
        for (j, ((v, o), p)) in traj.velocities[k].iter().zip(&traj.v_obs[k]).zip(&traj.v_prior[k]).enumerate() {
            let g = (1.0 - weights[j / block]) * alpha;
            if *v != o + g * (p - o) {
                bad += 1;
            }
        }
    }
    bad
}

fn visible_deviation(traj: &Trajectory, weights: &[f64]) -> f64 {
    let block = traj.states[0].len() / weights.len();
    let mut worst: f64 = 0.0;
    for k in 0..traj.steps() {
        for (j, (v, o)) in traj.velocities[k].iter().zip(&traj.v_obs[k]).enumerate() {
            if weights[j / block] == 1.0 {
                worst = worst.max((v - o).abs());
            }
        }
    }
    worst
}

fn max_state_difference(a: &Trajectory, b: &Trajectory) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .flat_map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

/// Scene, camera, and the unoccluded counterpart's grid and weights.
struct Setup {
    grid: VoxelGrid,
    camera: Camera,
    weights: VisibilityWeights,
    open_grid: VoxelGrid,
    open_weights: Vec<f64>,
}

fn setup(spec: &SceneSpec) -> Result<Setup, ExperimentError> {
    let p = params(spec);
    let visibility = |g: &VoxelGrid, c: &Camera| compute_visibility(g, c, &p).map_err(at("visibility", "compute_visibility"));
    match &spec.path {
        Some(path) => {
            let scene = Scene::from_path(path).map_err(at("visibility", "Scene::from_path"))?;
            let grid = scene.grid().map_err(at("visibility", "Scene::grid"))?;
            let weights = visibility(&grid, &scene.camera)?;
            let open_weights = vec![1.0; grid.len()];
            Ok(Setup {
                open_grid: grid.clone(),
                grid,
                camera: scene.camera,
                weights,
                open_weights,
            })
        }
        None => {
            let camera = builtin_camera(spec.resolution)?;
            let grid = builtin_grid(spec.resolution, true)?;
            let open_grid = builtin_grid(spec.resolution, false)?;
            let weights = visibility(&grid, &camera)?;
            let open_weights = visibility(&open_grid, &camera)?.weights();
            Ok(Setup {
                grid,
                camera,
                weights,
                open_grid,
                open_weights,
            })
        }
    }
}

/// `(1 - m) alpha_0` for the rear voxel of the probe pair.
pub fn probe_gate(spec: &SceneSpec, alpha0: f64) -> Result<f64, ExperimentError> {
    let res = spec.resolution;
    let camera = builtin_camera(res)?;
    let grid = VoxelGrid::new(res, vec![[res / 2, res / 2, 2], [res / 2, res / 2, 3]])
        .map_err(at("visibility", "VoxelGrid::new"))?;
    let p = VisibilityParams {
        beta: res as f64 / 2.0,
        ..params(spec)
    };
    let w = compute_visibility(&grid, &camera, &p).map_err(at("visibility", "compute_visibility"))?;
    Ok((1.0 - w.voxels[1].weight) * alpha0)
}

pub fn run(config: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let dims = config.observation.dimension;
    let lattice = config.lattice.build(dims).map_err(at("flowfield", "Lattice::cube"))?;
    let schedule = make_schedule(config, config.rho)?;
    let v_obs = analytic(&config.observation, FieldRole::Observation)?;
    let v_sem = analytic(&config.semantic[0], FieldRole::Semantic)?;
    let scene = setup(&config.scene)?;
    let weights = scene.weights.weights();
    let brute = brute_force_weights(
        &scene.grid,
        &scene.camera,
        scene.weights.kernel,
        scene.weights.sigma_d,
        config.scene.lambda,
    );
    let weight_mismatch = weights.iter().zip(&brute).filter(|(a, b)| a != b).count();
    let gate = probe_gate(&config.scene, schedule.alpha(0))?;
    let smooth: Vec<Arc<dyn VelocityField>> = config
        .sigmas
        .iter()
        .map(|&s| Ok(Arc::new(relax_over_schedule(v_sem.clone(), &lattice, s, &schedule)?) as Arc<dyn VelocityField>))
        .collect::<Result<_, ExperimentError>>()?;
    let noise = NoiseSpec::new(config.cutoff, config.amplitude, 0);
    let obs_blocks = |n: usize| BlockField::new(v_obs.clone(), n).map_err(at("flowfield", "BlockField::new"));

    let mut outcome = for_each_seed(config, |index, seed| {
        let mut out = SeedOutput::default();
        out.row(seed, PROBE, "two_sigma_gate", gate);
        for (&sigma, sm) in config.sigmas.iter().zip(&smooth) {
            let label = sigma_label(sigma);
            let prior = relaxed_prior(sm.clone(), &lattice, sigma, noise, config.priors, seed, Stream::PriorNoise)?;
            let pair = |n: usize, w: Vec<f64>| -> Result<BranchPair, ExperimentError> {
                let p = BlockField::new(prior.clone(), n).map_err(at("flowfield", "BlockField::new"))?;
                BranchPair::new(Arc::new(obs_blocks(n)?), Arc::new(p), sigma)
                    .and_then(|b| b.with_visibility(w))
                    .map_err(at("sampler", "BranchPair::with_visibility"))
            };
            let init = derive_seed(seed, Stream::Initial, 0);

            let n = scene.grid.len();
            let x0 = &initial_states(1, dims * n, init)[0];
            let gated = pair(n, weights.clone())?;
            let traj = integrate(&gated, &schedule, x0, Mode::RelaxFlow).map_err(at("sampler", "integrate"))?;
            out.row(seed, &label, "visible_deviation", visible_deviation(&traj, &weights));
            out.row(seed, &label, "weight_mismatch", weight_mismatch as f64);
            out.row(seed, &label, "blend_mismatch", blend_mismatches(&traj, &brute) as f64);
            out.row(seed, &label, "visible_voxels", weights.iter().filter(|m| **m == 1.0).count() as f64);
            out.row(seed, &label, "occluded_voxels", weights.iter().filter(|m| **m < 0.5).count() as f64);

            let m = scene.open_grid.len();
            let y0 = &initial_states(1, dims * m, init)[0];
            let open = pair(m, scene.open_weights.clone())?;
            let gated_open = integrate(&open, &schedule, y0, Mode::RelaxFlow).map_err(at("sampler", "integrate"))?;
            let plain = integrate(&open, &schedule, y0, Mode::ObservationOnly).map_err(at("sampler", "integrate"))?;
            let below = scene.open_weights.iter().filter(|w| **w < 1.0).count();
            out.row(seed, &label, "unoccluded_weights_below_one", below as f64);
            out.row(seed, &label, "unoccluded_difference", max_state_difference(&gated_open, &plain));

            if index < TRAJECTORY_SEEDS {
                out.trajectories.push((file_stem(seed, &label), traj));
            }
        }
        Ok(out)
    })?;

    let all = config.seed_count;
    let zero = |variant: &str, metric: &str, name: String| {
        Check::bound(name, Series::new(variant, metric), Relation::Close { tol: 0.0 }, 0.0, all)
    };
    for &sigma in &config.sigmas {
        let label = sigma_label(sigma);
        outcome.checks.extend([
            zero(&label, "visible_deviation", format!("{label} visible voxels follow the observation exactly")),
            zero(&label, "weight_mismatch", format!("{label} weights match the pairwise recomputation")),
            zero(&label, "blend_mismatch", format!("{label} blend matches the recomputation bitwise")),
            zero(&label, "unoccluded_weights_below_one", format!("{label} unoccluded scene is fully visible")),
            zero(&label, "unoccluded_difference", format!("{label} unoccluded run equals observation-only")),
            Check::bound(
                format!("{label} scene has an occluded voxel"),
                Series::new(&label, "occluded_voxels"),
                Relation::AtLeast { slack: 0.0 },
                1.0,
                all,
            ),
        ]);
    }
    let expected = (1.0 - (-4.0 * config.scene.lambda).exp()) * schedule.alpha(0);
    outcome.checks.push(Check::bound(
        "margin of two sigma_d gives the substituted gate",
        Series::new(PROBE, "two_sigma_gate"),
        Relation::Close { tol: GATE_TOL },
        expected,
        all,
    ));
    Ok(outcome)
}
