//! Trajectory divergence against the stability bound, on affine fields.
//!
//! Per seed: a random `A` (entries uniform in `[-1, 1]`) shared by four
//! fields `A x + b`. The true observation and semantic offsets have unit
//! norm; the estimators add perturbations with `||d_obs||` uniform in
//! `[amplitude / 5, amplitude]` and `||d_sem|| = ||d_obs|| * U(0.3, 1)`.
//! Lipschitz constants are the spectral norms of the estimator matrices,
//! the conditioning gap is zero, and `e_obs`, `e_sem` are path errors on
//! the true trajectory. The gap `||X_k - X^_k||` is compared to the bound
//! at every Euler step; `max_violation` is the largest `gap - bound`.

use std::sync::Arc;

use flowlab::flowfield::LinearField;
use flowlab::metrics::{path_error, stability_bound_series, Branch, StabilityBoundInputs};
use flowlab::sampler::integrate;
use flowlab::{BranchPair, Mode};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{at, derive_seed, file_stem, for_each_seed, make_schedule, SeedOutput, Stream, TRAJECTORY_SEEDS};
use crate::config::ExperimentConfig;
use crate::report::{Check, Outcome, Relation, Series};
use crate::ExperimentError;

pub const VARIANT: &str = "affine";

fn direction(rng: &mut ChaCha8Rng, d: usize, norm: f64) -> DVector<f64> {
    let v = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
    v.normalize() * norm
}

pub fn run(config: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let d = config.observation.dimension;
    let schedule = make_schedule(config, config.rho)?;
    let mut outcome = for_each_seed(config, |index, seed| {
        let mut out = SeedOutput::default();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Field, 0));
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let b_obs = direction(&mut rng, d, 1.0);
        let b_sem = direction(&mut rng, d, 1.0);
        let e_obs_norm = rng.random_range(0.2 * config.amplitude..=config.amplitude);
        let e_sem_norm = e_obs_norm * rng.random_range(0.3..1.0);
        let d_obs = direction(&mut rng, d, e_obs_norm);
        let d_sem = direction(&mut rng, d, e_sem_norm);

        let field = |b: DVector<f64>| LinearField::new(a.clone(), b).map_err(at("flowfield", "LinearField::new"));
        let (obs, sem) = (field(b_obs.clone())?, field(b_sem.clone())?);
        let (obs_hat, sem_hat) = (field(&b_obs + &d_obs)?, field(&b_sem + &d_sem)?);
        let pair = |o: &LinearField, s: &LinearField| {
            BranchPair::new(Arc::new(o.clone()), Arc::new(s.clone()), 0.0).map_err(at("sampler", "BranchPair::new"))
        };
        let (truth, estimate) = (pair(&obs, &sem)?, pair(&obs_hat, &sem_hat)?);
        let mut start = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Initial, 0));
        let x0: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut start)).collect();
        let x = integrate(&truth, &schedule, &x0, Mode::RelaxFlow).map_err(at("sampler", "integrate"))?;
        let x_hat = integrate(&estimate, &schedule, &x0, Mode::RelaxFlow).map_err(at("sampler", "integrate"))?;

        let e_obs = path_error(&x, &obs, &obs_hat, Branch::Obs).map_err(at("metrics", "path_error"))?.value;
        let e_sem = path_error(&x, &sem, &sem_hat, Branch::Sem).map_err(at("metrics", "path_error"))?.value;
        let inputs = StabilityBoundInputs {
            lipschitz_obs: obs_hat.lipschitz(),
            lipschitz_prior: sem_hat.lipschitz(),
            condition_gap: 0.0,
            e_obs,
            e_sem,
            schedule,
        };
        let bound = stability_bound_series(&inputs).map_err(at("metrics", "stability_bound"))?;
        let gaps: Vec<f64> = x
            .states
            .iter()
            .zip(&x_hat.states)
            .map(|(p, q)| p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .collect();
        let max_violation = gaps
            .iter()
            .zip(&bound)
            .map(|(g, b)| g - b)
            .fold(f64::NEG_INFINITY, f64::max);
        out.row(seed, VARIANT, "max_violation", max_violation);
        out.row(seed, VARIANT, "final_gap", *gaps.last().expect("non-empty path"));
        out.row(seed, VARIANT, "final_bound", *bound.last().expect("non-empty bound"));
        out.row(seed, VARIANT, "e_obs", e_obs);
        out.row(seed, VARIANT, "e_sem", e_sem);
        out.row(seed, VARIANT, "lipschitz_obs", inputs.lipschitz_obs);
        out.row(seed, VARIANT, "lipschitz_prior", inputs.lipschitz_prior);
        if index < TRAJECTORY_SEEDS {
            out.trajectories.push((file_stem(seed, "truth"), x));
            out.trajectories.push((file_stem(seed, "estimate"), x_hat));
        }
        Ok(out)
    })?;
    outcome.checks.push(Check::bound(
        "divergence within the stability bound at every step",
        Series::new(VARIANT, "max_violation"),
        Relation::AtMost { slack: 0.0 },
        0.0,
        config.seed_count,
    ));
    Ok(outcome)
}
