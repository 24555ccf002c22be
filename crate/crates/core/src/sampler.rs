//! Forward-Euler integration of the gated two-branch flow ODE.
//!
//! At step `k` both branch velocities are evaluated at the same state
//! `x_k` and time `t_k`, mixed with the gate `alpha_k`, and the state moves
//! by `dt` along the mix. Steps are uniform on `[0, 1 - epsilon]`.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::flowfield::{Lattice, VelocityField, DEFAULT_EPSILON};
use crate::relaxation::RelaxedField;

/// Gate value at step `k` of `K`: `1 - k / K` while `k <= floor(rho K)`,
/// zero afterwards.
///
/// `floor(rho K)` absorbs a relative rounding slack of 1e-12 so that, for
/// example, `rho = 0.29, K = 100` cuts off at 29 and not 28.
pub fn alpha_schedule(k: usize, steps: usize, rho: f64) -> Result<f64> {
    if steps == 0 {
        return Err(invalid("K", "need at least one step"));
    }
    if k > steps {
        return Err(invalid("k", format!("step {k} beyond K = {steps}")));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(invalid("rho", format!("must lie in [0, 1], got {rho}")));
    }
    Ok(if k <= cutoff_step(steps, rho) {
        (steps - k) as f64 / steps as f64
    } else {
        0.0
    })
}

fn cutoff_step(steps: usize, rho: f64) -> usize {
    let c = rho * steps as f64;
    (c + c * 1e-12).floor() as usize
}

/// Step count, gate cutoff and end-time margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub steps: usize,
    pub rho: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl Schedule {
    pub fn new(steps: usize, rho: f64) -> Result<Self> {
        Self::with_epsilon(steps, rho, DEFAULT_EPSILON)
    }

    pub fn with_epsilon(steps: usize, rho: f64, epsilon: f64) -> Result<Self> {
        let s = Self { steps, rho, epsilon };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        alpha_schedule(0, self.steps, self.rho)?;
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(invalid("epsilon", format!("must lie in [0, 1), got {}", self.epsilon)));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        (1.0 - self.epsilon) / self.steps as f64
    }

    /// `t_k = k dt` for `k = 0..=K`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    pub fn alpha(&self, k: usize) -> f64 {
        if k <= cutoff_step(self.steps, self.rho) && k <= self.steps {
            (self.steps - k) as f64 / self.steps as f64
        } else {
            0.0
        }
    }

    pub fn alphas(&self) -> Vec<f64> {
        (0..self.steps).map(|k| self.alpha(k)).collect()
    }
}

fn check_finite(v: &[f64], step: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { step })
    }
}

/// `x + dt v`.
pub fn euler_step(x: &[f64], dt: f64, v: &[f64]) -> Result<Vec<f64>> {
    check_dim(x.len(), v.len())?;
    if !dt.is_finite() || x.iter().chain(v).any(|a| !a.is_finite()) {
        return Err(invalid("euler_step", "inputs must be finite"));
    }
    Ok(x.iter().zip(v).map(|(a, b)| a + dt * b).collect())
}

/// `(1 - alpha) v_obs + alpha v_prior`.
pub fn blend(v_obs: &[f64], v_prior: &[f64], alpha: f64) -> Vec<f64> {
    v_obs.iter().zip(v_prior).map(|(o, p)| (1.0 - alpha) * o + alpha * p).collect()
}

/// `v_obs + (1 - m) alpha (v_prior - v_obs)` for one block.
pub fn visibility_blend(v_obs: &[f64], v_prior: &[f64], m: f64, alpha: f64) -> Result<Vec<f64>> {
    check_dim(v_obs.len(), v_prior.len())?;
    if !(m > 0.0 && m <= 1.0) {
        return Err(invalid("m", format!("visibility weight must lie in (0, 1], got {m}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid("alpha", format!("must lie in [0, 1], got {alpha}")));
    }
    let g = (1.0 - m) * alpha;
    if g == 0.0 {
        return Ok(v_obs.to_vec());
    }
    Ok(v_obs.iter().zip(v_prior).map(|(o, p)| o + g * (p - o)).collect())
}

/// The three sampler instantiations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Follows `v_obs` alone.
    ObservationOnly,
    /// Both blend terms use the observation field, so the gate has no
    /// effect beyond rounding.
    Standard,
    /// Observation field blended with the relaxed prior.
    #[serde(rename = "relaxflow")]
    RelaxFlow,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::ObservationOnly => "observation_only",
            Mode::Standard => "standard",
            Mode::RelaxFlow => "relaxflow",
        }
    }
}

/// Observation field and (already relaxed) prior provider over one state
/// space, optionally with per-block visibility weights.
#[derive(Clone)]
pub struct BranchPair {
    obs: Arc<dyn VelocityField>,
    prior: Arc<dyn VelocityField>,
    sigma: f64,
    visibility: Option<Vec<f64>>,
}

impl std::fmt::Debug for BranchPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BranchPair")
            .field("dim", &self.obs.dim())
            .field("sigma", &self.sigma)
            .field("visibility", &self.visibility.as_ref().map(Vec::len))
            .finish()
    }
}

impl BranchPair {
    /// `prior` is used as given; `sigma` records how it was relaxed.
    pub fn new(obs: Arc<dyn VelocityField>, prior: Arc<dyn VelocityField>, sigma: f64) -> Result<Self> {
        check_dim(obs.dim(), prior.dim())?;
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(invalid("sigma", "must be non-negative"));
        }
        Ok(Self {
            obs,
            prior,
            sigma,
            visibility: None,
        })
    }

    /// Relaxes `prior` on `lattice` at strength `sigma`, with grids
    /// precomputed at the schedule's step times.
    pub fn relaxed<P: VelocityField + 'static>(
        obs: Arc<dyn VelocityField>,
        prior: P,
        lattice: Lattice,
        sigma: f64,
        schedule: &Schedule,
    ) -> Result<Self> {
        let times = &schedule.times()[..schedule.steps];
        let relaxed = RelaxedField::new(prior, lattice, sigma, times)?;
        Self::new(obs, Arc::new(relaxed), sigma)
    }

    /// Attaches one weight per block; the state splits into equal blocks.
    pub fn with_visibility(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || !self.dim().is_multiple_of(weights.len()) {
            return Err(invalid("visibility", "block count must divide the state dimension"));
        }
        if let Some(m) = weights.iter().find(|m| !(**m > 0.0 && **m <= 1.0)) {
            return Err(invalid("visibility", format!("weights must lie in (0, 1], got {m}")));
        }
        self.visibility = Some(weights);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.obs.dim()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn visibility(&self) -> Option<&[f64]> {
        self.visibility.as_deref()
    }

    pub fn observation(&self) -> &dyn VelocityField {
        &*self.obs
    }

    pub fn prior(&self) -> &dyn VelocityField {
        &*self.prior
    }

    fn mix(&self, mode: Mode, v_obs: &[f64], v_prior: &[f64], alpha: f64) -> Result<Vec<f64>> {
        Ok(match mode {
            Mode::ObservationOnly => v_obs.to_vec(),
            Mode::Standard => blend(v_obs, v_obs, alpha),
            Mode::RelaxFlow => match &self.visibility {
                None => blend(v_obs, v_prior, alpha),
                Some(m) => {
                    let b = self.dim() / m.len();
                    let mut out = Vec::with_capacity(self.dim());
                    for (i, &mi) in m.iter().enumerate() {
                        let r = i * b..(i + 1) * b;
                        out.extend(visibility_blend(&v_obs[r.clone()], &v_prior[r], mi, alpha)?);
                    }
                    out
                }
            },
        })
    }
}

/// One integrated path with both branch velocities at every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub mode: Mode,
    pub dt: f64,
    /// Index of `states[0]` in the schedule.
    pub start_step: usize,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    pub v_obs: Vec<Vec<f64>>,
    pub v_prior: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has a start state")
    }

    pub fn steps(&self) -> usize {
        self.velocities.len()
    }

    /// Re-applies the recorded velocities to the first state.
    pub fn replay(&self) -> Result<Vec<f64>> {
        let mut x = self.states[0].clone();
        for v in &self.velocities {
            x = euler_step(&x, self.dt, v)?;
        }
        Ok(x)
    }

    /// `step, t, alpha, x*, obs*, prior*, v*`; the final row has empty
    /// velocity and gate fields.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let d = self.states[0].len();
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["step".to_string(), "t".to_string(), "alpha".to_string()];
        for prefix in ["x", "v_obs", "v_prior", "v"] {
            header.extend((0..d).map(|i| format!("{prefix}{i}")));
        }
        out.write_record(&header)?;
        for (k, x) in self.states.iter().enumerate() {
            let mut row = vec![(self.start_step + k).to_string(), self.times[k].to_string()];
            if k < self.steps() {
                row.push(self.alphas[k].to_string());
            } else {
                row.push(String::new());
            }
            row.extend(x.iter().map(f64::to_string));
            for series in [&self.v_obs, &self.v_prior, &self.velocities] {
                match series.get(k) {
                    Some(v) => row.extend(v.iter().map(f64::to_string)),
                    None => row.extend(std::iter::repeat_n(String::new(), d)),
                }
            }
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

/// Integrates from `x0` at `t_0` through all `K` steps.
pub fn integrate(branches: &BranchPair, schedule: &Schedule, x0: &[f64], mode: Mode) -> Result<Trajectory> {
    integrate_from(branches, schedule, 0, x0, mode)
}

/// Integrates from state `x` at step `start` through step `K`.
pub fn integrate_from(
    branches: &BranchPair,
    schedule: &Schedule,
    start: usize,
    x: &[f64],
    mode: Mode,
) -> Result<Trajectory> {
    schedule.validate()?;
    check_dim(branches.dim(), x.len())?;
    if start > schedule.steps {
        return Err(invalid("start", "beyond the last step"));
    }
    check_finite(x, start)?;
    let n = schedule.steps - start;
    let dt = schedule.dt();
    let mut traj = Trajectory {
        mode,
        dt,
        start_step: start,
        times: Vec::with_capacity(n + 1),
        states: Vec::with_capacity(n + 1),
        alphas: Vec::with_capacity(n),
        v_obs: Vec::with_capacity(n),
        v_prior: Vec::with_capacity(n),
        velocities: Vec::with_capacity(n),
    };
    let mut x = x.to_vec();
    for k in start..schedule.steps {
        let t = schedule.time(k);
        let alpha = schedule.alpha(k);
        let vo = branches.obs.velocity(&x, t)?;
        let vp = branches.prior.velocity(&x, t)?;
        check_finite(&vo, k)?;
        check_finite(&vp, k)?;
        let v = branches.mix(mode, &vo, &vp, alpha)?;
        let next: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + dt * b).collect();
        check_finite(&next, k + 1)?;
        traj.times.push(t);
        traj.states.push(std::mem::replace(&mut x, next));
        traj.alphas.push(alpha);
        traj.v_obs.push(vo);
        traj.v_prior.push(vp);
        traj.velocities.push(v);
    }
    traj.times.push(schedule.time(schedule.steps));
    traj.states.push(x);
    Ok(traj)
}

/// `n` standard-Gaussian draws in `R^dim` from a ChaCha8 stream.
pub fn initial_states(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

/// Final states of `n` trajectories started from [`initial_states`].
/// Output order follows the draw order whatever the thread schedule.
pub fn batch_sample(
    branches: &BranchPair,
    schedule: &Schedule,
    n: usize,
    seed: u64,
    mode: Mode,
) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(invalid("n", "need at least one sample"));
    }
    initial_states(n, branches.dim(), seed)
        .par_iter()
        .map(|x0| integrate(branches, schedule, x0, mode).map(|t| t.final_state().to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowfield::{AnalyticFlowField, FieldRole, GaussianMixture, LinearField};
    use nalgebra::{DMatrix, DVector};

    fn linear(a: &[f64], b: &[f64]) -> Arc<dyn VelocityField> {
        let d = b.len();
        Arc::new(LinearField::new(DMatrix::from_row_slice(d, d, a), DVector::from_column_slice(b)).unwrap())
    }

    fn constant(c: &[f64]) -> Arc<dyn VelocityField> {
        Arc::new(LinearField::constant(c.to_vec()))
    }

    #[test]
    fn alpha_examples() {
        let a: Vec<f64> = (0..=4).map(|k| alpha_schedule(k, 10, 0.2).unwrap()).collect();
        assert_eq!(a, vec![1.0, 0.9, 0.8, 0.0, 0.0]);
        assert_eq!(alpha_schedule(0, 10, 0.0).unwrap(), 1.0);
        assert!((1..=10).all(|k| alpha_schedule(k, 10, 0.0).unwrap() == 0.0));
        for k in 0..=10 {
            assert!((alpha_schedule(k, 10, 1.0).unwrap() - (1.0 - k as f64 / 10.0)).abs() < 1e-15);
        }
        assert_eq!(alpha_schedule(29, 100, 0.29).unwrap(), 0.71);
        assert!(alpha_schedule(11, 10, 0.5).is_err());
        assert!(alpha_schedule(0, 0, 0.5).is_err());
        assert!(alpha_schedule(0, 10, 1.5).is_err());
    }

    #[test]
    fn euler_examples() {
        assert_eq!(euler_step(&[1.0, 2.0], 0.1, &[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
        assert!(euler_step(&[1.0], f64::NAN, &[0.0]).is_err());
        assert!(euler_step(&[1.0], 0.1, &[f64::INFINITY]).is_err());

        let mut x = vec![0.0];
        for _ in 0..8 {
            x = euler_step(&x, 0.125, &[3.0]).unwrap();
        }
        assert_eq!(x, vec![8.0 * 0.125 * 3.0]);
    }

    #[test]
    fn euler_is_first_order() {
        let err = |k: usize| {
            let mut x = 1.0;
            for _ in 0..k {
                x = euler_step(&[x], 1.0 / k as f64, &[-x]).unwrap()[0];
            }
            (x - (-1.0f64).exp()).abs()
        };
        let ratio = err(100) / err(200);
        assert!((1.8..=2.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn visibility_blend_examples() {
        assert_eq!(visibility_blend(&[1.5, -2.0], &[9.0, 9.0], 1.0, 0.7).unwrap(), vec![1.5, -2.0]);
        let v = visibility_blend(&[1.0], &[5.0], 1e-300, 1.0).unwrap();
        assert!((v[0] - 5.0).abs() < 1e-12);
        assert_eq!(visibility_blend(&[0.0], &[4.0], 0.5, 0.5).unwrap(), vec![1.0]);
        assert!(visibility_blend(&[0.0], &[4.0], 0.0, 0.5).is_err());
        assert!(visibility_blend(&[0.0], &[4.0], 0.5, 1.5).is_err());
    }

    #[test]
    fn blend_extremes_are_exact() {
        let schedule = Schedule::new(4, 1.0).unwrap();
        let b = BranchPair::new(linear(&[0.3, -1.0, 0.5, 0.2], &[0.1, 0.0]), constant(&[2.0, -1.0]), 0.0).unwrap();
        let t = integrate(&b, &schedule, &[0.4, -0.6], Mode::RelaxFlow).unwrap();
        // alpha_0 = 1: pure prior step
        assert_eq!(t.velocities[0], t.v_prior[0]);
        let t0 = integrate(&b, &Schedule::new(4, 0.0).unwrap(), &[0.4, -0.6], Mode::RelaxFlow).unwrap();
        for k in 1..4 {
            assert_eq!(t0.velocities[k], t0.v_obs[k]);
        }
        let same = BranchPair::new(constant(&[0.7]), constant(&[0.7]), 1.0).unwrap();
        let ts = integrate(&same, &schedule, &[0.0], Mode::RelaxFlow).unwrap();
        for v in &ts.velocities {
            assert!((v[0] - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn observation_only_matches_relaxflow_after_step_zero_with_rho_zero() {
        let schedule = Schedule::new(20, 0.0).unwrap();
        let b = BranchPair::new(linear(&[-0.5, 0.2, 0.1, -1.0], &[0.3, 0.0]), constant(&[5.0, 5.0]), 1.0).unwrap();
        let rf = integrate(&b, &schedule, &[1.0, -1.0], Mode::RelaxFlow).unwrap();
        assert_eq!(rf.alphas[0], 1.0);
        assert_eq!(rf.velocities[0], rf.v_prior[0]);
        let oo = integrate_from(&b, &schedule, 1, &rf.states[1], Mode::ObservationOnly).unwrap();
        assert_eq!(&oo.states[..], &rf.states[1..]);
    }

    #[test]
    fn replay_is_bitwise() {
        let schedule = Schedule::new(37, 0.4).unwrap();
        let b = BranchPair::new(linear(&[0.3, -1.0, 0.5, 0.2], &[0.1, 0.0]), linear(&[0.0, 1.0, -1.0, 0.0], &[0.0, 0.2]), 0.0)
            .unwrap();
        for mode in [Mode::ObservationOnly, Mode::Standard, Mode::RelaxFlow] {
            let t = integrate(&b, &schedule, &[0.4, -0.6], mode).unwrap();
            let r = t.replay().unwrap();
            assert!(r.iter().zip(t.final_state()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn linear_field_recurrence() {
        let a = [0.3, -1.0, 0.5, 0.2];
        let bvec = [0.1, -0.4];
        let schedule = Schedule::new(50, 0.0).unwrap();
        let b = BranchPair::new(linear(&a, &bvec), linear(&a, &bvec), 0.0).unwrap();
        let t = integrate(&b, &schedule, &[1.0, 2.0], Mode::ObservationOnly).unwrap();
        let am = DMatrix::from_row_slice(2, 2, &a);
        let step = DMatrix::identity(2, 2) + &am * schedule.dt();
        let mut x = DVector::from_column_slice(&[1.0, 2.0]);
        for s in &t.states[1..] {
            x = &step * x + DVector::from_column_slice(&bvec) * schedule.dt();
            assert!((x[0] - s[0]).abs() < 1e-12 && (x[1] - s[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn telemetry_shares_state_and_blends_convexly() {
        let schedule = Schedule::new(30, 0.5).unwrap();
        let obs = linear(&[0.3, -1.0, 0.5, 0.2], &[0.1, 0.0]);
        let prior = linear(&[-1.0, 0.0, 0.0, -1.0], &[1.0, 1.0]);
        let b = BranchPair::new(obs.clone(), prior.clone(), 0.0).unwrap();
        let t = integrate(&b, &schedule, &[0.4, -0.6], Mode::RelaxFlow).unwrap();
        for k in 0..t.steps() {
            assert_eq!(t.v_obs[k], obs.velocity(&t.states[k], t.times[k]).unwrap());
            assert_eq!(t.v_prior[k], prior.velocity(&t.states[k], t.times[k]).unwrap());
            for i in 0..2 {
                let want = t.v_obs[k][i] + t.alphas[k] * (t.v_prior[k][i] - t.v_obs[k][i]);
                assert!((t.velocities[k][i] - want).abs() < 1e-12);
            }
        }
        for w in t.alphas.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn visible_everywhere_reduces_to_observation_only() {
        let schedule = Schedule::new(25, 0.6).unwrap();
        let b = BranchPair::new(linear(&[0.3, -1.0, 0.5, 0.2], &[0.1, 0.0]), constant(&[4.0, 4.0]), 1.0)
            .unwrap()
            .with_visibility(vec![1.0, 1.0])
            .unwrap();
        let rf = integrate(&b, &schedule, &[0.4, -0.6], Mode::RelaxFlow).unwrap();
        let oo = integrate(&b, &schedule, &[0.4, -0.6], Mode::ObservationOnly).unwrap();
        assert_eq!(rf.states, oo.states);
        assert!(b.clone().with_visibility(vec![0.0, 1.0]).is_err());
        assert!(b.with_visibility(vec![1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn non_finite_state_reports_step() {
        struct Blowup;
        impl VelocityField for Blowup {
            fn dim(&self) -> usize {
                1
            }
            fn velocity(&self, _x: &[f64], t: f64) -> Result<Vec<f64>> {
                Ok(vec![if t > 0.3 { f64::NAN } else { 1.0 }])
            }
        }
        let b = BranchPair::new(Arc::new(Blowup), constant(&[0.0]), 0.0).unwrap();
        let err = integrate(&b, &Schedule::new(10, 0.0).unwrap(), &[0.0], Mode::ObservationOnly).unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 4 }), "{err}");
    }

    #[test]
    fn batch_sampling_is_reproducible() {
        let schedule = Schedule::new(20, 0.3).unwrap();
        let obs = Arc::new(AnalyticFlowField::new(
            GaussianMixture::isotropic(vec![1.0, -1.0], 0.5).unwrap(),
            FieldRole::Observation,
        ));
        let b = BranchPair::new(obs.clone(), obs, 0.0).unwrap();
        let a = batch_sample(&b, &schedule, 16, 9, Mode::RelaxFlow).unwrap();
        assert_eq!(a, batch_sample(&b, &schedule, 16, 9, Mode::RelaxFlow).unwrap());
        let one = batch_sample(&b, &schedule, 1, 9, Mode::RelaxFlow).unwrap();
        let x0 = &initial_states(1, 2, 9)[0];
        assert_eq!(one[0], integrate(&b, &schedule, x0, Mode::RelaxFlow).unwrap().final_state());
        assert!(batch_sample(&b, &schedule, 0, 9, Mode::RelaxFlow).is_err());
    }

    #[test]
    fn pushforward_reaches_target_mean() {
        let schedule = Schedule::new(200, 0.0).unwrap();
        let obs = Arc::new(AnalyticFlowField::new(
            GaussianMixture::isotropic(vec![2.0], 0.1).unwrap(),
            FieldRole::Observation,
        ));
        let b = BranchPair::new(obs.clone(), obs, 0.0).unwrap();
        let xs = batch_sample(&b, &schedule, 4096, 3, Mode::ObservationOnly).unwrap();
        let mean = xs.iter().map(|x| x[0]).sum::<f64>() / xs.len() as f64;
        assert!((mean - 2.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn trajectory_csv_shape() {
        let schedule = Schedule::new(3, 1.0).unwrap();
        let b = BranchPair::new(constant(&[1.0, 0.0]), constant(&[0.0, 1.0]), 0.0).unwrap();
        let t = integrate(&b, &schedule, &[0.0, 0.0], Mode::RelaxFlow).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "step,t,alpha,x0,x1,v_obs0,v_obs1,v_prior0,v_prior1,v0,v1");
        assert!(lines[4].starts_with("3,"));
    }
}
