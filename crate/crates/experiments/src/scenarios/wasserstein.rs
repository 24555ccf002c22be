//! Sample-level ordering of the relaxed flow against the corrupted standard flow.
//!
//! Truth samples come from the clean two-branch flow (analytic `v_obs` and
//! `v_sem`, gate cutoff `rho`), so the prior conditioning matches the
//! semantic target exactly. Both competitors see the same corrupted
//! observation field `v_obs + n_obs`:
//!
//! - `standard`: that field alone (standard mode);
//! - `sigma=<s>`: blended with the mean of `priors` relaxed copies of
//!   `v_sem + n_i`.
//!
//! All three start from the same initial draws, so W2 to the truth set
//! measures the effect of the fields and not of resampling.

use std::sync::Arc;

use flowlab::flowfield::{inject_band_noise, FieldRole, NoiseSpec};
use flowlab::sampler::{batch_sample, initial_states, integrate};
use flowlab::{BranchPair, Mode, VelocityField};

use super::{
    analytic, at, at_least, derive_seed, file_stem, for_each_seed, relax_over_schedule, relaxed_prior, make_schedule,
    sigma_label, w2, SeedOutput, Stream, TRAJECTORY_SEEDS,
};
use crate::config::ExperimentConfig;
use crate::report::{Check, Outcome, Relation, Series};
use crate::ExperimentError;

/// Fraction of seeds on which the relaxed flow must be closer to the truth.
pub const REQUIRED_FRACTION: f64 = 0.9;

pub fn run(config: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let dims = config.observation.dimension;
    let lattice = config.lattice.build(dims).map_err(at("flowfield", "Lattice::cube"))?;
    let schedule = make_schedule(config, config.rho)?;
    let v_obs = analytic(&config.observation, FieldRole::Observation)?;
    let v_sem = analytic(&config.semantic[0], FieldRole::Semantic)?;
    let truth = BranchPair::new(v_obs.clone(), v_sem.clone(), 0.0).map_err(at("sampler", "BranchPair::new"))?;
    let smooth: Vec<Arc<dyn VelocityField>> = config
        .sigmas
        .iter()
        .map(|&s| Ok(Arc::new(relax_over_schedule(v_sem.clone(), &lattice, s, &schedule)?) as Arc<dyn VelocityField>))
        .collect::<Result<_, ExperimentError>>()?;
    let noise = NoiseSpec::new(config.cutoff, config.amplitude, 0);

    let mut outcome = for_each_seed(config, |index, seed| {
        let mut out = SeedOutput::default();
        let init = derive_seed(seed, Stream::Initial, 0);
        let obs_noise = NoiseSpec {
            seed: derive_seed(seed, Stream::ObsNoise, 0),
            ..noise
        };
        let noisy_obs: Arc<dyn VelocityField> =
            Arc::new(inject_band_noise(v_obs.clone(), &lattice, obs_noise).map_err(at("flowfield", "inject_band_noise"))?);
        let standard =
            BranchPair::new(noisy_obs.clone(), noisy_obs.clone(), 0.0).map_err(at("sampler", "BranchPair::new"))?;

        let mut runs = vec![("standard".to_string(), standard, Mode::Standard)];
        for (&sigma, sm) in config.sigmas.iter().zip(&smooth) {
            let prior = relaxed_prior(sm.clone(), &lattice, sigma, noise, config.priors, seed, Stream::PriorNoise)?;
            let pair = BranchPair::new(noisy_obs.clone(), prior, sigma).map_err(at("sampler", "BranchPair::new"))?;
            runs.push((sigma_label(sigma), pair, Mode::RelaxFlow));
        }

        let sample = |pair: &BranchPair, mode| {
            batch_sample(pair, &schedule, config.samples, init, mode).map_err(at("sampler", "batch_sample"))
        };
        let reference = sample(&truth, Mode::RelaxFlow)?;
        for (label, pair, mode) in &runs {
            out.row(seed, label, "w2", w2(&reference, &sample(pair, *mode)?)?);
        }

        if index < TRAJECTORY_SEEDS {
            let x0 = &initial_states(1, dims, init)[0];
            let mut path = |label: &str, pair: &BranchPair, mode| -> Result<(), ExperimentError> {
                let t = integrate(pair, &schedule, x0, mode).map_err(at("sampler", "integrate"))?;
                out.trajectories.push((file_stem(seed, label), t));
                Ok(())
            };
            path("truth", &truth, Mode::RelaxFlow)?;
            for (label, pair, mode) in &runs {
                path(label, pair, *mode)?;
            }
        }
        Ok(out)
    })?;

    let required = at_least(REQUIRED_FRACTION, config.seed_count);
    for &sigma in config.sigmas.iter().filter(|s| **s > 0.0) {
        let label = sigma_label(sigma);
        outcome.checks.push(Check::paired(
            format!("{label} closer to truth than standard"),
            Series::new(&label, "w2"),
            Series::new("standard", "w2"),
            Relation::Less,
            required,
        ));
    }
    Ok(outcome)
}
