//! Sweep over relaxation strength, gate cutoff and prior count.
//!
//! For every grid point `(sigma, rho, N)` and seed, the prior estimator is
//! the mean of `N` relaxed, independently perturbed copies of `v_sem`. Rows:
//!
//! - `e_sem`: its path error against the analytic `v_sem`, averaged over
//!   `samples` clean two-branch trajectories at that `rho`;
//! - `w2`: final samples of the estimated flow (clean observation branch)
//!   against the clean flow from the same initial draws.
//!
//! Only `e_sem` carries a verdict (every `sigma > 0` beats `sigma = 0` at
//! the same `rho` and `N`). `w2` is reported for inspection; the prior
//! count's effect in the source models depends on attention over
//! heterogeneous priors and is not asserted here.

use std::sync::Arc;

use flowlab::flowfield::{FieldRole, NoiseSpec};
use flowlab::metrics::{path_error, Branch};
use flowlab::sampler::{initial_states, integrate};
use flowlab::{BranchPair, Mode, VelocityField};

use super::{
    analytic, at, derive_seed, file_stem, for_each_seed, relax_over_schedule, relaxed_prior, make_schedule, w2, SeedOutput,
    Stream,
};
use crate::config::ExperimentConfig;
use crate::report::{Check, Outcome, Relation, Series};
use crate::ExperimentError;

pub fn label(sigma: f64, rho: f64, priors: usize) -> String {
    format!("sigma={sigma},rho={rho},n={priors}")
}

/// Swept strengths, always including the unrelaxed baseline `0`.
pub fn sigma_levels(config: &ExperimentConfig) -> Vec<f64> {
    let mut s = config.ablation.sigmas.clone();
    if !s.contains(&0.0) {
        s.insert(0, 0.0);
    }
    s
}

pub fn run(config: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let dims = config.observation.dimension;
    let lattice = config.lattice.build(dims).map_err(at("flowfield", "Lattice::cube"))?;
    // step times do not depend on rho, so one set of relaxed grids serves all
    let base = make_schedule(config, 0.0)?;
    let v_obs = analytic(&config.observation, FieldRole::Observation)?;
    let v_sem = analytic(&config.semantic[0], FieldRole::Semantic)?;
    let sigmas = sigma_levels(config);
    let smooth: Vec<Arc<dyn VelocityField>> = sigmas
        .iter()
        .map(|&s| Ok(Arc::new(relax_over_schedule(v_sem.clone(), &lattice, s, &base)?) as Arc<dyn VelocityField>))
        .collect::<Result<_, ExperimentError>>()?;
    let noise = NoiseSpec::new(config.cutoff, config.amplitude, 0);
    let grid = &config.ablation;

    let mut outcome = for_each_seed(config, |index, seed| {
        let mut out = SeedOutput::default();
        let starts = initial_states(config.samples, dims, derive_seed(seed, Stream::Initial, 0));
        for &rho in &grid.rhos {
            let schedule = make_schedule(config, rho)?;
            let truth =
                BranchPair::new(v_obs.clone(), v_sem.clone(), 0.0).map_err(at("sampler", "BranchPair::new"))?;
            let paths = starts
                .iter()
                .map(|x0| integrate(&truth, &schedule, x0, Mode::RelaxFlow))
                .collect::<Result<Vec<_>, _>>()
                .map_err(at("sampler", "integrate"))?;
            let reference: Vec<Vec<f64>> = paths.iter().map(|p| p.final_state().to_vec()).collect();
            for &priors in &grid.priors {
                for (&sigma, sm) in sigmas.iter().zip(&smooth) {
                    let name = label(sigma, rho, priors);
                    let prior = relaxed_prior(sm.clone(), &lattice, sigma, noise, priors, seed, Stream::PriorNoise)?;
                    let mut e_sem = 0.0;
                    for p in &paths {
                        e_sem += path_error(p, &*v_sem, &*prior, Branch::Sem).map_err(at("metrics", "path_error"))?.value;
                    }
                    out.row(seed, &name, "e_sem", e_sem / paths.len() as f64);
                    let estimate = BranchPair::new(v_obs.clone(), prior, sigma).map_err(at("sampler", "BranchPair::new"))?;
                    let finals = starts
                        .iter()
                        .map(|x0| integrate(&estimate, &schedule, x0, Mode::RelaxFlow).map(|t| t.final_state().to_vec()))
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(at("sampler", "integrate"))?;
                    out.row(seed, &name, "w2", w2(&reference, &finals)?);
                    // one seed only: the grid has many points
                    if index == 0 {
                        let t = integrate(&estimate, &schedule, &starts[0], Mode::RelaxFlow)
                            .map_err(at("sampler", "integrate"))?;
                        out.trajectories.push((file_stem(seed, &name), t));
                    }
                }
            }
        }
        Ok(out)
    })?;

    for &rho in &grid.rhos {
        for &priors in &grid.priors {
            let baseline = label(0.0, rho, priors);
            for &sigma in sigmas.iter().filter(|s| **s > 0.0) {
                let name = label(sigma, rho, priors);
                outcome.checks.push(Check::paired(
                    format!("{name} e_sem below unrelaxed"),
                    Series::new(&name, "e_sem"),
                    Series::new(&baseline, "e_sem"),
                    Relation::Less,
                    config.seed_count,
                ));
            }
        }
    }
    Ok(outcome)
}
