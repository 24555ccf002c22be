//! Path errors, transport distances and trajectory stability bounds.
//!
//! Time integrals use the left-endpoint rule on the Euler grid, so a path
//! error and the trajectory it is measured on share their discretization.

mod frechet;
mod transport;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::flowfield::VelocityField;
use crate::sampler::{Schedule, Trajectory};

pub use frechet::{frechet_distance, frechet_from_moments, moments, EIGEN_CLAMP, FRECHET_MAX_DIM};
pub use transport::{
    min_cost_assignment, wasserstein2_capped, wasserstein2_exact, wasserstein2_gaussian_1d, CappedDistance,
    W2_MAX_POINTS,
};

/// Equal-dimension finite points, optionally tagged with the seed that drew them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

impl PointSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(invalid("points", "set is empty"));
        };
        let d = first.len();
        if d == 0 {
            return Err(invalid("points", "dimension must be at least 1"));
        }
        for p in &points {
            check_dim(d, p.len())?;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(invalid("points", "coordinates must be finite"));
            }
        }
        Ok(Self { points, seed: None })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// Projection onto coordinate `d`.
    pub fn coordinate(&self, d: usize) -> Vec<f64> {
        self.points.iter().map(|p| p[d]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Obs,
    Sem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    LeftRiemann,
}

/// Path error of an estimator against an oracle along one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub branch: Branch,
    pub value: f64,
    /// `||oracle - estimator||^2` at each step's start state.
    pub integrand: Vec<f64>,
    /// Error over `[0, t_k]` for `k = 0..=K`; the last entry is `value`.
    pub cumulative: Vec<f64>,
    pub dt: f64,
    pub quadrature: Quadrature,
}

/// `sqrt(sum_k dt ||oracle(x_k, t_k) - estimator(x_k, t_k)||^2)` over the
/// trajectory's steps.
pub fn path_error<O, E>(trajectory: &Trajectory, oracle: &O, estimator: &E, branch: Branch) -> Result<ErrorReport>
where
    O: VelocityField + ?Sized,
    E: VelocityField + ?Sized,
{
    let steps = trajectory.velocities.len();
    if trajectory.states.len() != steps + 1 || trajectory.times.len() != steps + 1 {
        return Err(invalid("trajectory", "states, times and telemetry lengths disagree"));
    }
    let dim = trajectory.states[0].len();
    check_dim(dim, oracle.dim())?;
    check_dim(dim, estimator.dim())?;
    let dt = trajectory.dt;
    let mut integrand = Vec::with_capacity(steps);
    let mut cumulative = Vec::with_capacity(steps + 1);
    let mut acc = 0.0;
    cumulative.push(0.0);
    for k in 0..steps {
        let x = &trajectory.states[k];
        let t = trajectory.times[k];
        let o = oracle.velocity(x, t)?;
        let e = estimator.velocity(x, t)?;
        let sq: f64 = o.iter().zip(&e).map(|(a, b)| (a - b) * (a - b)).sum();
        if !sq.is_finite() {
            return Err(Error::NonFinite { step: k });
        }
        integrand.push(sq);
        acc += dt * sq;
        cumulative.push(acc.sqrt());
    }
    Ok(ErrorReport {
        branch,
        value: acc.sqrt(),
        integrand,
        cumulative,
        dt,
        quadrature: Quadrature::LeftRiemann,
    })
}

/// Ingredients of the trajectory stability bound. Lipschitz constants are
/// constant in time here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityBoundInputs {
    /// Lipschitz constant of the observation-branch estimator.
    pub lipschitz_obs: f64,
    /// Lipschitz constant of the relaxed prior estimator.
    pub lipschitz_prior: f64,
    /// Conditioning gap `||c_sem - c_prior||`.
    pub condition_gap: f64,
    pub e_obs: f64,
    pub e_sem: f64,
    pub schedule: Schedule,
}

impl StabilityBoundInputs {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lipschitz_obs", self.lipschitz_obs),
            ("lipschitz_prior", self.lipschitz_prior),
            ("condition_gap", self.condition_gap),
            ("e_obs", self.e_obs),
            ("e_sem", self.e_sem),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, format!("must be finite and non-negative, got {v}")));
            }
        }
        self.schedule.validate()
    }
}

/// Bound on `||X_t - X^_t||` at grid time `t_step`:
///
/// `((1 - a_t) E_obs + a_t E_sem + gap * int L~) * exp(int ((1 - a) L + a L~))`
///
/// with the gate taken piecewise constant on the Euler grid (`a_t` is the
/// gate of the step starting at `t`, zero at the final time) and both
/// integrals left-endpoint sums over `[0, t_step]`.
pub fn stability_bound(inputs: &StabilityBoundInputs, step: usize) -> Result<f64> {
    inputs.validate()?;
    if step > inputs.schedule.steps {
        return Err(invalid("step", format!("{step} beyond K = {}", inputs.schedule.steps)));
    }
    Ok(bound_at(inputs, step))
}

fn bound_at(inputs: &StabilityBoundInputs, step: usize) -> f64 {
    let s = &inputs.schedule;
    let dt = s.dt();
    let mut int_prior = 0.0;
    let mut int_mix = 0.0;
    for k in 0..step {
        let a = s.alpha(k);
        int_prior += dt * inputs.lipschitz_prior;
        int_mix += dt * ((1.0 - a) * inputs.lipschitz_obs + a * inputs.lipschitz_prior);
    }
    let a = s.alpha(step);
    let forcing = (1.0 - a) * inputs.e_obs + a * inputs.e_sem + inputs.condition_gap * int_prior;
    forcing * int_mix.exp()
}

/// [`stability_bound`] at every grid time `k = 0..=K`.
pub fn stability_bound_series(inputs: &StabilityBoundInputs) -> Result<Vec<f64>> {
    inputs.validate()?;
    Ok((0..=inputs.schedule.steps).map(|k| bound_at(inputs, k)).collect())
}

/// Checks the integral inequality `u(t) <= kc + int_0^t kappa u` and, if it
/// holds, its exponential consequence `u(t) <= kc exp(int_0^t kappa)`.
///
/// Samples share a uniform grid of spacing `dt`; integrals use the
/// trapezoid rule and comparisons allow `1e-6 * max(1, |rhs|)`. A failed
/// hypothesis is an error naming the first offending index; a failed
/// conclusion is `Ok(false)`.
pub fn verify_gronwall(u: &[f64], kappa: &[f64], kc: f64, dt: f64) -> Result<bool> {
    check_dim(u.len(), kappa.len())?;
    if u.is_empty() {
        return Err(invalid("u", "no samples"));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(invalid("dt", "must be positive"));
    }
    if !(kc.is_finite() && kc >= 0.0) {
        return Err(invalid("kc", "must be non-negative"));
    }
    if u.iter().chain(kappa).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid("u/kappa", "samples must be finite and non-negative"));
    }
    let tol = |rhs: f64| 1e-6 * rhs.abs().max(1.0);

    let mut int_ku = 0.0;
    for i in 0..u.len() {
        if i > 0 {
            int_ku += 0.5 * dt * (kappa[i - 1] * u[i - 1] + kappa[i] * u[i]);
        }
        let rhs = kc + int_ku;
        if u[i] > rhs + tol(rhs) {
            return Err(Error::GronwallHypothesis {
                index: i,
                lhs: u[i],
                rhs,
            });
        }
    }
    let mut int_k = 0.0;
    for i in 0..u.len() {
        if i > 0 {
            int_k += 0.5 * dt * (kappa[i - 1] + kappa[i]);
        }
        let rhs = kc * int_k.exp();
        if u[i] > rhs + tol(rhs) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowfield::LinearField;
    use crate::sampler::{integrate, BranchPair, Mode};
    use std::sync::Arc;

    fn constant(c: &[f64]) -> Arc<dyn VelocityField> {
        Arc::new(LinearField::constant(c.to_vec()))
    }

    #[test]
    fn path_error_examples() {
        let schedule = Schedule::with_epsilon(1000, 0.0, 0.0).unwrap();
        let f = constant(&[1.0, 2.0]);
        let b = BranchPair::new(f.clone(), f.clone(), 0.0).unwrap();
        let t = integrate(&b, &schedule, &[0.0, 0.0], Mode::ObservationOnly).unwrap();
        assert_eq!(path_error(&t, &*f, &*f, Branch::Obs).unwrap().value, 0.0);

        let g = constant(&[1.0 + 3.0, 2.0 - 4.0]);
        let r = path_error(&t, &*f, &*g, Branch::Sem).unwrap();
        assert!((r.value - 5.0).abs() < 1e-6);
        assert_eq!(r.cumulative.len(), 1001);
        assert_eq!(*r.cumulative.last().unwrap(), r.value);
        let sum: f64 = r.integrand.iter().map(|v| v * r.dt).sum();
        assert!((r.value - sum.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn path_error_rejects_truncated_telemetry() {
        let schedule = Schedule::new(5, 0.0).unwrap();
        let f = constant(&[1.0]);
        let b = BranchPair::new(f.clone(), f.clone(), 0.0).unwrap();
        let mut t = integrate(&b, &schedule, &[0.0], Mode::ObservationOnly).unwrap();
        t.times.pop();
        assert!(path_error(&t, &*f, &*f, Branch::Obs).is_err());
    }

    fn inputs(l: f64, lt: f64, gap: f64, eo: f64, es: f64) -> StabilityBoundInputs {
        StabilityBoundInputs {
            lipschitz_obs: l,
            lipschitz_prior: lt,
            condition_gap: gap,
            e_obs: eo,
            e_sem: es,
            schedule: Schedule::new(10, 0.5).unwrap(),
        }
    }

    #[test]
    fn stability_bound_degenerate_cases() {
        let zero = inputs(2.0, 3.0, 0.0, 0.0, 0.0);
        assert!(stability_bound_series(&zero).unwrap().iter().all(|&b| b == 0.0));
        let flat = inputs(0.0, 0.0, 0.0, 0.4, 1.2);
        for k in 0..=10 {
            let a = flat.schedule.alpha(k);
            let want = (1.0 - a) * 0.4 + a * 1.2;
            assert!((stability_bound(&flat, k).unwrap() - want).abs() < 1e-15);
        }
        assert!(stability_bound(&flat, 11).is_err());
        assert!(stability_bound(&inputs(-1.0, 0.0, 0.0, 0.0, 0.0), 0).is_err());
    }

    #[test]
    fn gronwall_examples() {
        let n = 101;
        let dt = 0.01;
        let kc = 2.0;
        assert!(verify_gronwall(&vec![kc; n], &vec![0.0; n], kc, dt).unwrap());

        let c = 1.5;
        let u: Vec<f64> = (0..n).map(|i| kc * (c * i as f64 * dt).exp()).collect();
        assert!(verify_gronwall(&u, &vec![c; n], kc, dt).unwrap());

        let over: Vec<f64> = u.iter().map(|v| v * 1.01).collect();
        let err = verify_gronwall(&over, &vec![c; n], kc, dt).unwrap_err();
        assert!(matches!(err, Error::GronwallHypothesis { .. }));
    }
}
