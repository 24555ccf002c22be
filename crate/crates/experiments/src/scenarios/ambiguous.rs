//! Two priors resolving an ambiguous observation.
//!
//! The observation target is a mixture whose modes differ only in the
//! coordinates the observation cannot pin down (defaults: `(1, +-2)`).
//! Prior A and prior B point at different modes. Each prior is perturbed
//! by band noise and relaxed; sampling under A should land closer to the
//! observation mode nearest A's mean (target A) than sampling under B
//! does, and vice versa.
//!
//! Rows per seed and relaxation strength:
//!
//! - `w2_a_target_a`, `w2_b_target_a`, `w2_b_target_b`, `w2_a_target_b`:
//!   final samples under each prior against draws from each target;
//! - `w2_identical`: prior A twice, with independent noise but shared
//!   initial draws, so only the prior's instance noise differs;
//! - `w2_rho0`: A against B with the gate cut off after the first step,
//!   with independent initial draws;
//! - `w2_identical_rho0`: the same with prior A twice (independent noise
//!   and draws), the finite-sample floor that `w2_rho0` is compared to.

use std::sync::Arc;

use flowlab::flowfield::{FieldRole, GaussianMixture, NoiseSpec};
use flowlab::sampler::{batch_sample, initial_states, integrate};
use flowlab::{BranchPair, Mode, Schedule, VelocityField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    analytic, at, at_least, derive_seed, file_stem, for_each_seed, relax_over_schedule, relaxed_prior, make_schedule,
    sigma_label, w2, SeedOutput, Stream, TRAJECTORY_SEEDS,
};
use crate::config::{ExperimentConfig, MixtureSpec};
use crate::report::{Check, Outcome, Relation, Series};
use crate::ExperimentError;

pub const REQUIRED_FRACTION: f64 = 0.9;
/// Median W2 between two runs under the same prior must stay below this.
pub const IDENTICAL_BOUND: f64 = 0.2;
/// Median W2 between A and B at `rho = 0` must stay below this multiple of
/// the identical-prior median at `rho = 0`.
pub const RHO0_FACTOR: f64 = 1.5;

/// Index of the observation component whose mean is nearest the mean of
/// `prior` (weighted over its components).
pub fn nearest_component(observation: &MixtureSpec, prior: &MixtureSpec) -> usize {
    let dim = prior.dimension;
    let mut centre = vec![0.0; dim];
    for c in &prior.components {
        for (m, v) in centre.iter_mut().zip(&c.mean) {
            *m += c.weight * v;
        }
    }
    let dist = |mean: &[f64]| mean.iter().zip(&centre).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    (0..observation.components.len())
        .min_by(|&i, &j| {
            dist(&observation.components[i].mean).total_cmp(&dist(&observation.components[j].mean))
        })
        .expect("observation has components")
}

fn target(observation: &MixtureSpec, prior: &MixtureSpec) -> Result<GaussianMixture, ExperimentError> {
    let c = &observation.components[nearest_component(observation, prior)];
    GaussianMixture::isotropic(c.mean.clone(), c.std).map_err(at("flowfield", "GaussianMixture::new"))
}

pub fn run(config: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let dims = config.observation.dimension;
    let lattice = config.lattice.build(dims).map_err(at("flowfield", "Lattice::cube"))?;
    let schedule = make_schedule(config, config.rho)?;
    let closed = make_schedule(config, 0.0)?;
    let v_obs: Arc<dyn VelocityField> = analytic(&config.observation, FieldRole::Observation)?;
    let (spec_a, spec_b) = (&config.semantic[0], &config.semantic[1]);
    let (target_a, target_b) = (target(&config.observation, spec_a)?, target(&config.observation, spec_b)?);
    let v_a = analytic(spec_a, FieldRole::Semantic)?;
    let v_b = analytic(spec_b, FieldRole::Semantic)?;
    // grids at every step time of both schedules (they coincide)
    let smooth: Vec<(Arc<dyn VelocityField>, Arc<dyn VelocityField>)> = config
        .sigmas
        .iter()
        .map(|&s| {
            let a = relax_over_schedule(v_a.clone(), &lattice, s, &schedule)?;
            let b = relax_over_schedule(v_b.clone(), &lattice, s, &schedule)?;
            Ok((Arc::new(a) as Arc<dyn VelocityField>, Arc::new(b) as Arc<dyn VelocityField>))
        })
        .collect::<Result<_, ExperimentError>>()?;
    let noise = NoiseSpec::new(config.cutoff, config.amplitude, 0);
    let n = config.samples;

    let mut outcome = for_each_seed(config, |index, seed| {
        let mut out = SeedOutput::default();
        let first = derive_seed(seed, Stream::Initial, 0);
        let second = derive_seed(seed, Stream::SecondInitial, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Target, 0));
        let draws_a: Vec<Vec<f64>> = (0..n).map(|_| target_a.sample(&mut rng)).collect();
        let draws_b: Vec<Vec<f64>> = (0..n).map(|_| target_b.sample(&mut rng)).collect();

        for (&sigma, (sm_a, sm_b)) in config.sigmas.iter().zip(&smooth) {
            let label = sigma_label(sigma);
            let pair = |smooth: &Arc<dyn VelocityField>, stream| -> Result<BranchPair, ExperimentError> {
                let prior = relaxed_prior(smooth.clone(), &lattice, sigma, noise, config.priors, seed, stream)?;
                BranchPair::new(v_obs.clone(), prior, sigma).map_err(at("sampler", "BranchPair::new"))
            };
            let under_a = pair(sm_a, Stream::PriorNoise)?;
            let under_b = pair(sm_b, Stream::PriorNoise)?;
            let again_a = pair(sm_a, Stream::SecondPriorNoise)?;
            let sample = |p: &BranchPair, s: &Schedule, init| {
                batch_sample(p, s, n, init, Mode::RelaxFlow).map_err(at("sampler", "batch_sample"))
            };
            let final_a = sample(&under_a, &schedule, first)?;
            let final_b = sample(&under_b, &schedule, first)?;
            out.row(seed, &label, "w2_a_target_a", w2(&final_a, &draws_a)?);
            out.row(seed, &label, "w2_b_target_a", w2(&final_b, &draws_a)?);
            out.row(seed, &label, "w2_b_target_b", w2(&final_b, &draws_b)?);
            out.row(seed, &label, "w2_a_target_b", w2(&final_a, &draws_b)?);
            let repeat = sample(&again_a, &schedule, first)?;
            out.row(seed, &label, "w2_identical", w2(&final_a, &repeat)?);
            let closed_a = sample(&under_a, &closed, first)?;
            let closed_b = sample(&under_b, &closed, second)?;
            out.row(seed, &label, "w2_rho0", w2(&closed_a, &closed_b)?);
            let closed_again = sample(&again_a, &closed, second)?;
            out.row(seed, &label, "w2_identical_rho0", w2(&closed_a, &closed_again)?);

            if index < TRAJECTORY_SEEDS {
                let x0 = &initial_states(1, dims, first)[0];
                for (name, p) in [("under_a", &under_a), ("under_b", &under_b)] {
                    let t = integrate(p, &schedule, x0, Mode::RelaxFlow).map_err(at("sampler", "integrate"))?;
                    out.trajectories.push((file_stem(seed, &format!("{label}_{name}")), t));
                }
            }
        }
        Ok(out)
    })?;

    let required = at_least(REQUIRED_FRACTION, config.seed_count);
    for &sigma in &config.sigmas {
        let label = sigma_label(sigma);
        let s = |metric: &str| Series::new(&label, metric);
        outcome.checks.push(Check::paired(
            format!("{label} prior A lands closer to target A"),
            s("w2_a_target_a"),
            s("w2_b_target_a"),
            Relation::Less,
            required,
        ));
        outcome.checks.push(Check::paired(
            format!("{label} prior B lands closer to target B"),
            s("w2_b_target_b"),
            s("w2_a_target_b"),
            Relation::Less,
            required,
        ));
        outcome.checks.push(Check::median_under(
            format!("{label} identical priors agree"),
            s("w2_identical"),
            IDENTICAL_BOUND,
        ));
        outcome.checks.push(Check::median_below(
            format!("{label} closed gate removes the prior's influence"),
            s("w2_rho0"),
            s("w2_identical_rho0"),
            RHO0_FACTOR,
        ));
    }
    Ok(outcome)
}
