//! Analytic rectified-flow velocity fields over Gaussian-mixture targets.
//!
//! The source distribution is always the standard Gaussian and the
//! interpolant is linear, `x_t = (1 - t) x0 + t x1`. For an isotropic
//! component `N(mu, s^2 I)` the pair `(x1 - x0, x_t)` is jointly Gaussian,
//! so the conditional expectation of the velocity given `x_t` is affine in
//! `x_t` and the mixture velocity is a responsibility-weighted sum of those
//! affine maps. [`monte_carlo_velocity`] estimates the same quantity from
//! raw samples and serves as the independent check.

mod grid;
mod mixture;
mod montecarlo;
mod noise;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};

pub use grid::{sample_on_grid, GridField, Lattice};
pub use mixture::{GaussianMixture, MixtureComponent};
pub use montecarlo::{default_bandwidth, monte_carlo_velocity, MonteCarloEstimate, MC_MIN_SAMPLES};
pub use noise::{inject_band_noise, BandNoise, NoiseSpec, PerturbedField, NYQUIST};

/// Integration stops at `1 - DEFAULT_EPSILON`; the deterministic-target
/// velocity diverges at `t = 1`.
pub const DEFAULT_EPSILON: f64 = 1e-3;

/// A time-dependent velocity field on `R^dim`.
pub trait VelocityField: Send + Sync {
    fn dim(&self) -> usize;

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;

    /// True when the field ignores `t`, so one grid serves every time.
    fn is_autonomous(&self) -> bool {
        false
    }
}

impl<T: VelocityField + ?Sized> VelocityField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        (**self).velocity(x, t)
    }

    fn is_autonomous(&self) -> bool {
        (**self).is_autonomous()
    }
}

impl<T: VelocityField + ?Sized> VelocityField for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        (**self).velocity(x, t)
    }

    fn is_autonomous(&self) -> bool {
        (**self).is_autonomous()
    }
}

impl<T: VelocityField + ?Sized> VelocityField for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        (**self).velocity(x, t)
    }

    fn is_autonomous(&self) -> bool {
        (**self).is_autonomous()
    }
}

/// Which ideal field an analytic flow stands in for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldRole {
    Observation,
    Semantic,
}

pub(crate) fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && (0.0..1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::TimeOutOfRange(t))
    }
}

/// Marginal rectified-flow velocity toward `mixture` at state `x` and time `t`.
///
/// Component `j` contributes `mu_j + c_j (x - t mu_j)` with
/// `c_j = (t s_j^2 - (1 - t)) / ((1 - t)^2 + t^2 s_j^2)`, weighted by its
/// posterior responsibility under the time-`t` marginal `N(t mu_j, ((1-t)^2 + t^2 s_j^2) I)`.
pub fn oracle_velocity(mixture: &GaussianMixture, x: &[f64], t: f64) -> Result<Vec<f64>> {
    check_time(t)?;
    let dim = mixture.dimension();
    check_dim(dim, x.len())?;
    if mixture.components().is_empty() {
        return Err(Error::InvalidMixture("mixture has no components".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid("x", "state must be finite"));
    }

    let one_minus = 1.0 - t;
    let mut log_resp = Vec::with_capacity(mixture.components().len());
    let mut coeffs = Vec::with_capacity(mixture.components().len());
    for comp in mixture.components() {
        let var = one_minus * one_minus + t * t * comp.std * comp.std;
        let sq: f64 = x
            .iter()
            .zip(&comp.mean)
            .map(|(xi, mi)| {
                let d = xi - t * mi;
                d * d
            })
            .sum();
        log_resp.push(
            comp.weight.ln() - 0.5 * dim as f64 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * sq / var,
        );
        coeffs.push((t * comp.std * comp.std - one_minus) / var);
    }
    let max = log_resp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let norm: f64 = log_resp.iter().map(|l| (l - max).exp()).sum();

    let mut v = vec![0.0; dim];
    for ((comp, l), c) in mixture.components().iter().zip(&log_resp).zip(&coeffs) {
        let r = (l - max).exp() / norm;
        if r == 0.0 {
            continue;
        }
        for d in 0..dim {
            v[d] += r * (comp.mean[d] + c * (x[d] - t * comp.mean[d]));
        }
    }
    Ok(v)
}

/// Rectified-flow field whose ideal target is a Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticFlowField {
    target: GaussianMixture,
    role: FieldRole,
}

impl AnalyticFlowField {
    pub fn new(target: GaussianMixture, role: FieldRole) -> Self {
        Self { target, role }
    }

    pub fn target(&self) -> &GaussianMixture {
        &self.target
    }

    pub fn role(&self) -> FieldRole {
        self.role
    }
}

impl VelocityField for AnalyticFlowField {
    fn dim(&self) -> usize {
        self.target.dimension()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        oracle_velocity(&self.target, x, t)
    }
}

/// Time-independent affine field `v(x) = A x + b`.
///
/// Its Lipschitz constant is the spectral norm of `A`, which makes it the
/// reference case for stability-bound checks.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    matrix: DMatrix<f64>,
    offset: DVector<f64>,
}

impl LinearField {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(invalid("matrix", "must be square"));
        }
        check_dim(matrix.nrows(), offset.len())?;
        if matrix.iter().chain(offset.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("matrix", "entries must be finite"));
        }
        Ok(Self { matrix, offset })
    }

    pub fn constant(offset: Vec<f64>) -> Self {
        let n = offset.len();
        Self {
            matrix: DMatrix::zeros(n, n),
            offset: DVector::from_vec(offset),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    /// Largest singular value of `A`.
    pub fn lipschitz(&self) -> f64 {
        if self.matrix.is_empty() {
            return 0.0;
        }
        self.matrix.singular_values().max()
    }
}

impl VelocityField for LinearField {
    fn dim(&self) -> usize {
        self.offset.len()
    }

    fn velocity(&self, x: &[f64], _t: f64) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let x = DVector::from_column_slice(x);
        Ok((&self.matrix * x + &self.offset).data.into())
    }

    fn is_autonomous(&self) -> bool {
        true
    }
}

/// Applies one field independently to each contiguous block of a
/// concatenated state, e.g. one block per voxel.
#[derive(Debug, Clone)]
pub struct BlockField<F> {
    inner: F,
    blocks: usize,
}

impl<F: VelocityField> BlockField<F> {
    pub fn new(inner: F, blocks: usize) -> Result<Self> {
        if blocks == 0 {
            return Err(invalid("blocks", "need at least one block"));
        }
        Ok(Self { inner, blocks })
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn block_dim(&self) -> usize {
        self.inner.dim()
    }
}

impl<F: VelocityField> VelocityField for BlockField<F> {
    fn dim(&self) -> usize {
        self.inner.dim() * self.blocks
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let mut out = Vec::with_capacity(x.len());
        for block in x.chunks(self.inner.dim()) {
            out.extend(self.inner.velocity(block, t)?);
        }
        Ok(out)
    }

    fn is_autonomous(&self) -> bool {
        self.inner.is_autonomous()
    }
}

/// Pointwise sum of two fields over the same state space.
#[derive(Debug, Clone)]
pub struct SumField<A, B> {
    a: A,
    b: B,
}

impl<A: VelocityField, B: VelocityField> SumField<A, B> {
    pub fn new(a: A, b: B) -> Result<Self> {
        check_dim(a.dim(), b.dim())?;
        Ok(Self { a, b })
    }
}

impl<A: VelocityField, B: VelocityField> VelocityField for SumField<A, B> {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut v = self.a.velocity(x, t)?;
        for (p, q) in v.iter_mut().zip(self.b.velocity(x, t)?) {
            *p += q;
        }
        Ok(v)
    }

    fn is_autonomous(&self) -> bool {
        self.a.is_autonomous() && self.b.is_autonomous()
    }
}
