//! Gaussian low-pass relaxation of lattice-sampled velocity fields.
//!
//! Convolution is separable, one axis at a time. At the lattice boundary the
//! kernel is renormalized over the taps that land in bounds, so every output
//! is a convex combination of inputs and constant fields stay constant.

mod spectral;

use std::ops::Range;

use crate::error::{invalid, Result};
use crate::flowfield::{check_time, sample_on_grid, GridField, Lattice, VelocityField};

pub use spectral::{attenuation_profile, band_energy, band_energy_with_kernel, KernelGain, SpectralReport};

/// Upper bound on the number of taps of a [`GaussianKernel1D`].
pub const MAX_TAPS: usize = 100_000;

/// Discrete Gaussian with `+-ceil(3 sigma)` support, normalized to sum 1.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel1D {
    sigma: f64,
    taps: Vec<f64>,
}

impl GaussianKernel1D {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn radius(&self) -> usize {
        self.taps.len() / 2
    }

    /// Tap at signed offset `i`.
    pub fn tap(&self, i: isize) -> f64 {
        let r = self.radius() as isize;
        if i.abs() > r {
            0.0
        } else {
            self.taps[(i + r) as usize]
        }
    }

    /// Real DFT gain `sum_j w_j cos(omega j)`, `omega` in radians per site.
    pub fn gain(&self, omega: f64) -> f64 {
        let r = self.radius() as isize;
        (-r..=r).map(|j| self.tap(j) * (omega * j as f64).cos()).sum()
    }
}

pub fn make_kernel(sigma: f64) -> Result<GaussianKernel1D> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(invalid("sigma", format!("must be positive, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil();
    if 2.0 * radius + 1.0 > MAX_TAPS as f64 {
        return Err(invalid("sigma", format!("kernel would exceed {MAX_TAPS} taps")));
    }
    let radius = radius as usize;
    let denom = 2.0 * sigma * sigma;
    // build one half and mirror it so taps[-i] == taps[i] bit for bit
    let half: Vec<f64> = (0..=radius).map(|i| (-((i * i) as f64) / denom).exp()).collect();
    let mut taps: Vec<f64> = half.iter().rev().chain(half.iter().skip(1)).copied().collect();
    let sum: f64 = half[0] + 2.0 * half[1..].iter().sum::<f64>();
    for w in taps.iter_mut() {
        *w /= sum;
    }
    Ok(GaussianKernel1D { sigma, taps })
}

/// Convolves one line with boundary renormalization.
pub(crate) fn convolve_line(input: &[f64], kernel: &GaussianKernel1D, out: &mut [f64]) {
    let n = input.len() as isize;
    let r = kernel.radius() as isize;
    for (i, o) in out.iter_mut().enumerate() {
        let i = i as isize;
        let lo = (-r).max(-i);
        let hi = r.min(n - 1 - i);
        let mut acc = 0.0;
        let mut norm = 0.0;
        for j in lo..=hi {
            let w = kernel.taps[(j + r) as usize];
            acc += w * input[(i + j) as usize];
            norm += w;
        }
        *o = acc / norm;
    }
}

/// Blurs a row-major array of shape `shape` (with `channels` interleaved
/// values per site) along `axis`. Each range in `segments` (positions along
/// the axis) is treated as an independent line with its own boundaries.
pub(crate) fn blur_axis(
    values: &[f64],
    shape: &[usize],
    channels: usize,
    axis: usize,
    kernel: &GaussianKernel1D,
    segments: &[Range<usize>],
) -> Vec<f64> {
    let n = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product::<usize>() * channels;
    let outer: usize = shape[..axis].iter().product();
    let mut out = values.to_vec();
    let mut line = vec![0.0; n];
    let mut res = vec![0.0; n];
    for o in 0..outer {
        for inner in 0..stride {
            let base = o * n * stride + inner;
            for (k, v) in line.iter_mut().enumerate() {
                *v = values[base + k * stride];
            }
            for seg in segments {
                convolve_line(&line[seg.clone()], kernel, &mut res[seg.clone()]);
            }
            for (k, v) in res.iter().enumerate() {
                out[base + k * stride] = *v;
            }
        }
    }
    out
}

/// Applies `R_sigma`: separable Gaussian smoothing of every velocity
/// component along every lattice axis. `sigma` is in lattice sites;
/// `sigma == 0` returns the field unchanged.
pub fn relax_field(field: &GridField, sigma: f64) -> Result<GridField> {
    if sigma == 0.0 {
        return Ok(field.clone());
    }
    let kernel = make_kernel(sigma)?;
    let shape = field.lattice().extents().to_vec();
    let mut values = field.values().to_vec();
    for axis in 0..shape.len() {
        values = blur_axis(&values, &shape, field.channels(), axis, &kernel, &[0..shape[axis]]);
    }
    Ok(field.with_values(values))
}

/// Largest `||v(a) - v(b)|| / ||a - b||` over lattice-adjacent site pairs.
///
/// This is a lower bound on the true Lipschitz constant; it is meant for
/// comparing a field with its relaxed version.
pub fn estimate_lipschitz(field: &GridField) -> Result<f64> {
    let lattice = field.lattice();
    if lattice.extents().iter().any(|&e| e < 2) {
        return Err(invalid("field", "every lattice extent must be at least 2"));
    }
    let strides = lattice.strides();
    let c = field.channels();
    let vals = field.values();
    let mut best: f64 = 0.0;
    for site in 0..lattice.len() {
        let idx = lattice.multi_index(site);
        for d in 0..lattice.dims() {
            if idx[d] + 1 >= lattice.extents()[d] {
                continue;
            }
            let nb = site + strides[d];
            let diff: f64 = (0..c)
                .map(|k| {
                    let e = vals[nb * c + k] - vals[site * c + k];
                    e * e
                })
                .sum::<f64>()
                .sqrt();
            best = best.max(diff / lattice.spacing()[d]);
        }
    }
    Ok(best)
}

/// Pointwise-evaluable relaxation of an arbitrary field: sample on a
/// lattice at time `t`, apply [`relax_field`], interpolate multilinearly.
///
/// Grids for the times in `times` are computed once at construction; other
/// times are computed on demand. An autonomous inner field is relaxed once
/// and that grid serves every time.
#[derive(Debug, Clone)]
pub struct RelaxedField<F> {
    inner: F,
    lattice: Lattice,
    sigma: f64,
    cache: Vec<(f64, GridField)>,
}

impl<F: VelocityField> RelaxedField<F> {
    pub fn new(inner: F, lattice: Lattice, sigma: f64, times: &[f64]) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(invalid("sigma", "must be non-negative"));
        }
        let mut field = Self {
            inner,
            lattice,
            sigma,
            cache: Vec::new(),
        };
        let mut times = times.to_vec();
        times.sort_by(f64::total_cmp);
        times.dedup();
        if field.inner.is_autonomous() {
            times.truncate(1);
        }
        let mut cache = Vec::with_capacity(times.len());
        for t in times {
            cache.push((t, field.compute(t)?));
        }
        field.cache = cache;
        Ok(field)
    }

    pub fn inner(&self) -> &F {
        &self.inner
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn compute(&self, t: f64) -> Result<GridField> {
        let raw = sample_on_grid(&self.inner, &self.lattice, t)?;
        relax_field(&raw, self.sigma)
    }

    fn cached(&self, t: f64) -> Option<&GridField> {
        if self.inner.is_autonomous() {
            return self.cache.first().map(|(_, g)| g);
        }
        self.cache
            .binary_search_by(|(ct, _)| ct.total_cmp(&t))
            .ok()
            .map(|i| &self.cache[i].1)
    }

    /// The relaxed grid at time `t`.
    pub fn grid(&self, t: f64) -> Result<GridField> {
        match self.cached(t) {
            Some(g) => Ok(g.clone()),
            None => self.compute(t),
        }
    }
}

impl<F: VelocityField> VelocityField for RelaxedField<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        check_time(t)?;
        match self.cached(t) {
            Some(g) => g.interpolate(x),
            None => self.compute(t)?.interpolate(x),
        }
    }

    fn is_autonomous(&self) -> bool {
        self.inner.is_autonomous()
    }
}
