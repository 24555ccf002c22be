use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{check_time, GaussianMixture};
use crate::error::{check_dim, invalid, Error, Result};

/// Smallest admissible Monte-Carlo sample count.
pub const MC_MIN_SAMPLES: usize = 10_000;

/// Kish effective sample size below which an estimate is refused.
pub const MC_MIN_EFFECTIVE_SAMPLES: f64 = 50.0;

/// Default kernel bandwidth: a tenth of the marginal std of `x_t`.
pub fn default_bandwidth(mixture: &GaussianMixture, t: f64) -> f64 {
    0.1 * mixture.marginal_std(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloEstimate {
    pub velocity: Vec<f64>,
    /// Per-coordinate standard error of `velocity`.
    pub standard_error: Vec<f64>,
    pub effective_samples: f64,
}

impl MonteCarloEstimate {
    /// Largest per-coordinate deviation from `reference`, in standard errors.
    pub fn z_score(&self, reference: &[f64]) -> f64 {
        self.velocity
            .iter()
            .zip(&self.standard_error)
            .zip(reference)
            .map(|((v, se), r)| (v - r).abs() / se.max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }
}

/// Estimates `E[x1 - x0 | x_t = x]` from `n` independent `(x0, x1)` draws.
///
/// Draws are weighted by a Gaussian kernel of width `bandwidth` around `x`
/// and the velocity is the intercept of a kernel-weighted local-linear fit
/// of `x1 - x0` on `x_t - x`. The local-linear form removes the first-order
/// bias a plain kernel average picks up from the slope of the density; for a
/// single component the conditional mean is affine and the fit is unbiased.
/// Standard errors come from the equivalent-kernel weights and the fit
/// residuals (heteroskedasticity-robust).
pub fn monte_carlo_velocity(
    mixture: &GaussianMixture,
    x: &[f64],
    t: f64,
    n: usize,
    bandwidth: f64,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    check_time(t)?;
    let dim = mixture.dimension();
    check_dim(dim, x.len())?;
    if n < MC_MIN_SAMPLES {
        return Err(invalid("n", format!("need at least {MC_MIN_SAMPLES} samples, got {n}")));
    }
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(invalid("bandwidth", "must be positive"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inv_two_h2 = 0.5 / (bandwidth * bandwidth);
    // (offset from x, velocity, weight) for draws with non-negligible weight
    let mut kept: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut x0 = vec![0.0; dim];
    for _ in 0..n {
        for v in x0.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let x1 = mixture.sample(&mut rng);
        let mut offset = Vec::with_capacity(dim);
        let mut sq = 0.0;
        for d in 0..dim {
            let xt = (1.0 - t) * x0[d] + t * x1[d];
            let o = xt - x[d];
            sq += o * o;
            offset.push(o);
        }
        let w = (-sq * inv_two_h2).exp();
        if w > 0.0 {
            let u = (0..dim).map(|d| x1[d] - x0[d]).collect();
            kept.push((offset, u, w));
        }
    }

    let sum_w: f64 = kept.iter().map(|k| k.2).sum();
    let sum_w2: f64 = kept.iter().map(|k| k.2 * k.2).sum();
    let effective = if sum_w2 > 0.0 { sum_w * sum_w / sum_w2 } else { 0.0 };
    if effective < MC_MIN_EFFECTIVE_SAMPLES {
        return Err(Error::InsufficientSamples {
            effective,
            floor: MC_MIN_EFFECTIVE_SAMPLES,
        });
    }

    // Weighted least squares on design rows z = [1, offset / h].
    let p = dim + 1;
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DMatrix::<f64>::zeros(p, dim);
    let mut z = DVector::<f64>::zeros(p);
    for (offset, u, w) in &kept {
        design_row(&mut z, offset, bandwidth);
        for i in 0..p {
            for j in 0..p {
                gram[(i, j)] += w * z[i] * z[j];
            }
            for d in 0..dim {
                rhs[(i, d)] += w * z[i] * u[d];
            }
        }
    }
    let inv = gram.try_inverse().ok_or(Error::InsufficientSamples {
        effective,
        floor: MC_MIN_EFFECTIVE_SAMPLES,
    })?;
    let coef = &inv * &rhs;
    let intercept_row = inv.row(0).transpose();

    let mut var = vec![0.0; dim];
    for (offset, u, w) in &kept {
        design_row(&mut z, offset, bandwidth);
        let ell = w * intercept_row.dot(&z);
        for d in 0..dim {
            let fit: f64 = (0..p).map(|i| z[i] * coef[(i, d)]).sum();
            let r = u[d] - fit;
            var[d] += ell * ell * r * r;
        }
    }

    Ok(MonteCarloEstimate {
        velocity: (0..dim).map(|d| coef[(0, d)]).collect(),
        standard_error: var.into_iter().map(f64::sqrt).collect(),
        effective_samples: effective,
    })
}

fn design_row(z: &mut DVector<f64>, offset: &[f64], h: f64) {
    z[0] = 1.0;
    for (d, o) in offset.iter().enumerate() {
        z[d + 1] = o / h;
    }
}
