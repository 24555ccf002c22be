//! Scenario implementations and the pieces they share.

pub mod ablation;
pub mod ambiguous;
pub mod error_reduction;
pub mod stability;
pub mod visibility;
pub mod wasserstein;

use std::sync::Arc;

use flowlab::flowfield::{AnalyticFlowField, BandNoise, FieldRole, NoiseSpec, SumField};
use flowlab::metrics::{wasserstein2_exact, PointSet};
use flowlab::relaxation::RelaxedField;
use flowlab::{Lattice, Schedule, Trajectory, VelocityField};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::report::{Outcome, Row};
use crate::ExperimentError;

/// Trajectory CSVs are written for this many leading seeds.
pub const TRAJECTORY_SEEDS: usize = 3;

/// Independent random streams derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Initial = 1,
    SecondInitial = 2,
    Signal = 3,
    ObsNoise = 4,
    PriorNoise = 5,
    SecondPriorNoise = 6,
    Target = 7,
    Field = 8,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for `stream`, copy `index`, of run seed `seed`.
pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ stream as u64) ^ index)
}

/// Maps a core error to the module and operation that raised it.
pub(crate) fn at(module: &'static str, operation: &'static str) -> impl Fn(flowlab::Error) -> ExperimentError {
    move |e| ExperimentError::runtime(module, operation, e)
}

/// `sigma=<value>` with the shortest round-trip rendering of the value.
pub fn sigma_label(sigma: f64) -> String {
    format!("sigma={sigma}")
}

/// Filename-safe form of a label.
pub fn file_stem(seed: u64, label: &str) -> String {
    let clean: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("seed{seed}_{clean}")
}

/// Pointwise mean of several fields.
pub struct MeanField {
    parts: Vec<Arc<dyn VelocityField>>,
}

impl MeanField {
    pub fn new(parts: Vec<Arc<dyn VelocityField>>) -> Result<Self, ExperimentError> {
        let dim = parts.first().map(|p| p.dim()).unwrap_or(0);
        if dim == 0 || parts.iter().any(|p| p.dim() != dim) {
            return Err(ExperimentError::runtime(
                "flowfield",
                "MeanField::new",
                flowlab::Error::InvalidParameter {
                    name: "parts",
                    reason: "need at least one field, all of the same dimension".into(),
                },
            ));
        }
        Ok(Self { parts })
    }
}

impl VelocityField for MeanField {
    fn dim(&self) -> usize {
        self.parts[0].dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> flowlab::Result<Vec<f64>> {
        let mut acc = vec![0.0; self.dim()];
        for p in &self.parts {
            for (a, v) in acc.iter_mut().zip(p.velocity(x, t)?) {
                *a += v;
            }
        }
        let n = self.parts.len() as f64;
        Ok(acc.into_iter().map(|a| a / n).collect())
    }

    fn is_autonomous(&self) -> bool {
        self.parts.iter().all(|p| p.is_autonomous())
    }
}

/// Analytic field for one mixture spec.
pub fn analytic(spec: &crate::config::MixtureSpec, role: FieldRole) -> Result<Arc<AnalyticFlowField>, ExperimentError> {
    let target = spec.build().map_err(at("flowfield", "GaussianMixture::new"))?;
    Ok(Arc::new(AnalyticFlowField::new(target, role)))
}

/// `R_sigma[field]` with grids at every step time of `schedule`.
pub fn relax_over_schedule<F: VelocityField>(
    field: F,
    lattice: &Lattice,
    sigma: f64,
    schedule: &Schedule,
) -> Result<RelaxedField<F>, ExperimentError> {
    let times = schedule.times();
    RelaxedField::new(field, lattice.clone(), sigma, &times[..schedule.steps]).map_err(at("relaxation", "RelaxedField::new"))
}

/// Relaxed prior estimator `R[v_sem] + mean_i R[n_i]`, which equals the
/// mean of `R[v_sem + n_i]` over `copies` independently perturbed priors.
/// The smooth part is relaxed once and shared; each noise copy is
/// time-independent, so it is relaxed on a single grid.
pub fn relaxed_prior(
    smooth: Arc<dyn VelocityField>,
    lattice: &Lattice,
    sigma: f64,
    noise: NoiseSpec,
    copies: usize,
    seed: u64,
    stream: Stream,
) -> Result<Arc<dyn VelocityField>, ExperimentError> {
    let mut parts: Vec<Arc<dyn VelocityField>> = Vec::with_capacity(copies);
    for i in 0..copies {
        let spec = NoiseSpec {
            seed: derive_seed(seed, stream, i as u64),
            ..noise
        };
        let n = BandNoise::new(lattice, smooth.dim(), spec).map_err(at("flowfield", "inject_band_noise"))?;
        let r = RelaxedField::new(n, lattice.clone(), sigma, &[0.0]).map_err(at("relaxation", "RelaxedField::new"))?;
        parts.push(Arc::new(r));
    }
    let sum = SumField::new(smooth, MeanField::new(parts)?).map_err(at("flowfield", "SumField::new"))?;
    Ok(Arc::new(sum))
}

/// Exact W2 between two equally sized sample sets.
pub fn w2(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, ExperimentError> {
    let set = |s: &[Vec<f64>]| PointSet::new(s.to_vec()).map_err(at("metrics", "PointSet::new"));
    wasserstein2_exact(&set(a)?, &set(b)?).map_err(at("metrics", "wasserstein2_exact"))
}

/// The config's schedule.
pub fn make_schedule(config: &ExperimentConfig, rho: f64) -> Result<Schedule, ExperimentError> {
    Schedule::new(config.steps, rho).map_err(at("sampler", "Schedule::new"))
}

/// Rows and trajectories produced for one seed.
#[derive(Default)]
pub struct SeedOutput {
    pub rows: Vec<Row>,
    pub trajectories: Vec<(String, Trajectory)>,
}

impl SeedOutput {
    pub fn row(&mut self, seed: u64, variant: &str, metric: &str, value: f64) {
        self.rows.push(Row::new(seed, variant, metric, value));
    }
}

/// Runs `f` on every seed (possibly concurrently) and concatenates the
/// results in seed order. `f` also receives the seed's index in the run.
pub fn for_each_seed<F>(config: &ExperimentConfig, f: F) -> Result<Outcome, ExperimentError>
where
    F: Fn(usize, u64) -> Result<SeedOutput, ExperimentError> + Sync,
{
    let seeds = config.seeds();
    let outputs: Vec<SeedOutput> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| f(i, s))
        .collect::<Result<_, _>>()?;
    let mut outcome = Outcome::default();
    for o in outputs {
        outcome.rows.extend(o.rows);
        outcome.trajectories.extend(o.trajectories);
    }
    Ok(outcome)
}

/// Number of seeds that is at least `fraction` of `n`.
pub fn at_least(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 - 1e-9).ceil() as usize
}
