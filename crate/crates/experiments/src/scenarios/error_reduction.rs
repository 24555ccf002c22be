//! Relaxation against high-frequency estimator error.
//!
//! Per seed, two levels:
//!
//! - Field level: a smooth synthetic signal (wave vectors at most a fifth of
//!   the cutoff) plus band noise above the cutoff, on the config lattice.
//!   Rows `field_error` (distance to the clean signal), `lipschitz`, and
//!   the noise's `hf_fraction`.
//! - Path level: the noisy prior estimator `v_sem + n`, relaxed on the
//!   lattice, scored by its path error `e_sem` against the analytic `v_sem`
//!   along clean two-branch trajectories (mean over `samples` paths).
//!
//! Variant `raw` is the unrelaxed estimator (lattice interpolation only);
//! `sigma=<s>` is its relaxation at strength `s`.

use std::sync::Arc;

use flowlab::flowfield::{BandNoise, FieldRole, NoiseSpec};
use flowlab::metrics::{path_error, Branch};
use flowlab::relaxation::{band_energy, estimate_lipschitz, relax_field};
use flowlab::sampler::{initial_states, integrate};
use flowlab::{BranchPair, GridField, Mode, VelocityField};

use super::{
    analytic, at, derive_seed, file_stem, for_each_seed, relax_over_schedule, relaxed_prior, make_schedule, sigma_label,
    SeedOutput, Stream, TRAJECTORY_SEEDS,
};
use crate::config::ExperimentConfig;
use crate::report::{Check, Outcome, Relation, Series};
use crate::ExperimentError;

/// Smooth-signal cutoff as a fraction of the noise cutoff.
pub const SIGNAL_CUTOFF_FRACTION: f64 = 0.2;

pub const HF_FRACTION_FLOOR: f64 = 0.95;
pub const LIPSCHITZ_SLACK: f64 = 1e-9;
pub const IDENTITY_TOL: f64 = 1e-12;

fn distance(a: &GridField, b: &GridField) -> Result<f64, ExperimentError> {
    Ok(a.combine(1.0, b, -1.0).map_err(at("flowfield", "GridField::combine"))?.l2_norm())
}

pub fn run(config: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let dims = config.observation.dimension;
    let lattice = config.lattice.build(dims).map_err(at("flowfield", "Lattice::cube"))?;
    let schedule = make_schedule(config, config.rho)?;
    let v_obs = analytic(&config.observation, FieldRole::Observation)?;
    let v_sem = analytic(&config.semantic[0], FieldRole::Semantic)?;
    let truth = BranchPair::new(v_obs, v_sem.clone(), 0.0).map_err(at("sampler", "BranchPair::new"))?;

    // index 0 is the raw estimator
    let mut levels = vec![("raw".to_string(), 0.0)];
    levels.extend(config.sigmas.iter().map(|&s| (sigma_label(s), s)));
    let smooth: Vec<Arc<dyn VelocityField>> = levels
        .iter()
        .map(|(_, s)| Ok(Arc::new(relax_over_schedule(v_sem.clone(), &lattice, *s, &schedule)?) as Arc<dyn VelocityField>))
        .collect::<Result<_, ExperimentError>>()?;
    let noise_spec = NoiseSpec::new(config.cutoff, config.amplitude, 0);

    let mut outcome = for_each_seed(config, |index, seed| {
        let mut out = SeedOutput::default();

        let signal_spec = NoiseSpec::new(config.cutoff * SIGNAL_CUTOFF_FRACTION, 1.0, derive_seed(seed, Stream::Signal, 0));
        let signal = BandNoise::low_band(&lattice, dims, signal_spec)
            .and_then(|b| b.on_lattice(0.0))
            .map_err(at("flowfield", "BandNoise::low_band"))?;
        let noise_spec_field = NoiseSpec {
            seed: derive_seed(seed, Stream::PriorNoise, 0),
            ..noise_spec
        };
        let noise = BandNoise::new(&lattice, dims, noise_spec_field)
            .and_then(|b| b.on_lattice(0.0))
            .map_err(at("flowfield", "inject_band_noise"))?;
        let hf = band_energy(&noise, config.cutoff).map_err(at("relaxation", "band_energy"))?;
        out.row(seed, "noise", "hf_fraction", hf.high_fraction());
        let noisy = signal.combine(1.0, &noise, 1.0).map_err(at("flowfield", "GridField::combine"))?;
        for (label, sigma) in &levels {
            let relaxed = relax_field(&noisy, *sigma).map_err(at("relaxation", "relax_field"))?;
            out.row(seed, label, "field_error", distance(&signal, &relaxed)?);
            let lip = estimate_lipschitz(&relaxed).map_err(at("relaxation", "estimate_lipschitz"))?;
            out.row(seed, label, "lipschitz", lip);
        }

        let estimators: Vec<Arc<dyn VelocityField>> = levels
            .iter()
            .zip(&smooth)
            .map(|((_, s), sm)| relaxed_prior(sm.clone(), &lattice, *s, noise_spec, 1, seed, Stream::PriorNoise))
            .collect::<Result<_, _>>()?;
        let mut totals = vec![0.0; levels.len()];
        let starts = initial_states(config.samples, dims, derive_seed(seed, Stream::Initial, 0));
        for (i, x0) in starts.iter().enumerate() {
            let traj = integrate(&truth, &schedule, x0, Mode::RelaxFlow).map_err(at("sampler", "integrate"))?;
            for (total, est) in totals.iter_mut().zip(&estimators) {
                *total += path_error(&traj, &*v_sem, &**est, Branch::Sem)
                    .map_err(at("metrics", "path_error"))?
                    .value;
            }
            if i == 0 && index < TRAJECTORY_SEEDS {
                out.trajectories.push((file_stem(seed, "truth"), traj));
            }
        }
        for ((label, _), total) in levels.iter().zip(totals) {
            out.row(seed, label, "e_sem", total / config.samples as f64);
        }
        Ok(out)
    })?;

    let n = config.seed_count;
    outcome.checks.push(Check::bound(
        "noise energy above the cutoff",
        Series::new("noise", "hf_fraction"),
        Relation::AtLeast { slack: 0.0 },
        HF_FRACTION_FLOOR,
        n,
    ));
    for &sigma in &config.sigmas {
        let label = sigma_label(sigma);
        if sigma == 0.0 {
            for metric in ["field_error", "lipschitz", "e_sem"] {
                outcome.checks.push(Check::paired(
                    format!("{label} {metric} equals raw"),
                    Series::new(&label, metric),
                    Series::new("raw", metric),
                    Relation::Close { tol: IDENTITY_TOL },
                    n,
                ));
            }
            continue;
        }
        outcome.checks.push(Check::paired(
            format!("{label} field error below raw"),
            Series::new(&label, "field_error"),
            Series::new("raw", "field_error"),
            Relation::Less,
            n,
        ));
        outcome.checks.push(Check::paired(
            format!("{label} lipschitz estimate not above raw"),
            Series::new(&label, "lipschitz"),
            Series::new("raw", "lipschitz"),
            Relation::AtMost { slack: LIPSCHITZ_SLACK },
            n,
        ));
        outcome.checks.push(Check::paired(
            format!("{label} e_sem below raw"),
            Series::new(&label, "e_sem"),
            Series::new("raw", "e_sem"),
            Relation::Less,
            n,
        ));
    }
    Ok(outcome)
}
