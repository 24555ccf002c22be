//! Band-limited perturbations modelling high-frequency estimator error.
//!
//! Noise is a sum of random-phase cosines whose wave vectors are exact DFT
//! bins of a declared verification lattice, all with radial frequency above
//! the cutoff. On that lattice every bit of noise energy therefore falls in
//! the high band, so spectral assumptions can be checked deterministically.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{GridField, Lattice, VelocityField};
use crate::error::{check_dim, invalid, Result};

/// Lattice Nyquist frequency in cycles per site.
pub const NYQUIST: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Cutoff in cycles per lattice site; must lie in `(0, 0.5)`.
    pub cutoff: f64,
    pub amplitude: f64,
    pub seed: u64,
    /// Cosines per velocity component.
    pub modes: usize,
}

impl NoiseSpec {
    pub fn new(cutoff: f64, amplitude: f64, seed: u64) -> Self {
        Self {
            cutoff,
            amplitude,
            seed,
            modes: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Wave {
    channel: usize,
    /// Cycles per unit length along each axis.
    wavenumber: Vec<f64>,
    phase: f64,
    coef: f64,
}

/// Deterministic high-frequency noise field, reproducible from its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct BandNoise {
    lattice: Lattice,
    channels: usize,
    spec: NoiseSpec,
    waves: Vec<Wave>,
}

impl BandNoise {
    pub fn new(lattice: &Lattice, channels: usize, spec: NoiseSpec) -> Result<Self> {
        Self::build(lattice, channels, spec, true)
    }

    /// Same construction with wave vectors drawn from `0 < ||m / N|| <= cutoff`
    /// instead: a smooth, zero-mean synthetic signal.
    pub fn low_band(lattice: &Lattice, channels: usize, spec: NoiseSpec) -> Result<Self> {
        Self::build(lattice, channels, spec, false)
    }

    fn build(lattice: &Lattice, channels: usize, spec: NoiseSpec, high: bool) -> Result<Self> {
        if !(spec.cutoff.is_finite() && spec.cutoff > 0.0 && spec.cutoff < NYQUIST) {
            return Err(invalid(
                "cutoff",
                format!("must lie in (0, {NYQUIST}) cycles per site, got {}", spec.cutoff),
            ));
        }
        if !spec.amplitude.is_finite() {
            return Err(invalid("amplitude", "must be finite"));
        }
        if spec.modes == 0 {
            return Err(invalid("modes", "need at least one mode"));
        }
        if channels == 0 {
            return Err(invalid("channels", "need at least one channel"));
        }

        let candidates = band_bins(lattice.extents(), spec.cutoff, high);
        if candidates.is_empty() {
            return Err(invalid("cutoff", "no lattice frequency lies in the requested band"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut waves = Vec::new();
        for channel in 0..channels {
            let count = spec.modes.min(candidates.len());
            let picks = sample(&mut rng, candidates.len(), count);
            let mut coefs: Vec<f64> = (0..count).map(|_| StandardNormal.sample(&mut rng)).collect();
            // sum of squares 2 gives unit RMS for distinct frequencies
            let norm = (coefs.iter().map(|c| c * c).sum::<f64>() / 2.0).sqrt();
            for c in coefs.iter_mut() {
                *c /= norm;
            }
            for (pick, coef) in picks.into_iter().zip(coefs) {
                let bins = &candidates[pick];
                let wavenumber = bins
                    .iter()
                    .enumerate()
                    .map(|(d, &m)| m as f64 / (lattice.extents()[d] as f64 * lattice.spacing()[d]))
                    .collect();
                let phase = rng.random::<f64>() * std::f64::consts::TAU;
                waves.push(Wave {
                    channel,
                    wavenumber,
                    phase,
                    coef,
                });
            }
        }
        Ok(Self {
            lattice: lattice.clone(),
            channels,
            spec,
            waves,
        })
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Noise vector at physical point `x`.
    pub fn value(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.lattice.dims(), x.len())?;
        let mut out = vec![0.0; self.channels];
        if self.spec.amplitude == 0.0 {
            return Ok(out);
        }
        let origin = self.lattice.origin();
        for w in &self.waves {
            let arg: f64 = w
                .wavenumber
                .iter()
                .zip(x)
                .zip(origin)
                .map(|((k, xi), o)| k * (xi - o))
                .sum();
            out[w.channel] += w.coef * (std::f64::consts::TAU * arg + w.phase).cos();
        }
        for v in out.iter_mut() {
            *v *= self.spec.amplitude;
        }
        Ok(out)
    }

    /// Noise sampled on its verification lattice.
    pub fn on_lattice(&self, time: f64) -> Result<GridField> {
        let mut values = Vec::with_capacity(self.lattice.len() * self.channels);
        for i in 0..self.lattice.len() {
            values.extend(self.value(&self.lattice.site(i))?);
        }
        GridField::new(self.lattice.clone(), self.channels, values, time)
    }

    /// Adds the noise to a grid field living on the same lattice.
    pub fn perturb_grid(&self, field: &GridField) -> Result<GridField> {
        if field.lattice() != &self.lattice || field.channels() != self.channels {
            return Err(invalid("field", "noise and field lattices differ"));
        }
        if self.spec.amplitude == 0.0 {
            return Ok(field.clone());
        }
        let noise = self.on_lattice(field.time())?;
        field.combine(1.0, &noise, 1.0)
    }
}

/// Time-independent field whose state space is the lattice's physical
/// space; meaningful when `channels` equals the lattice dimension.
impl VelocityField for BandNoise {
    fn dim(&self) -> usize {
        self.channels
    }

    fn velocity(&self, x: &[f64], _t: f64) -> Result<Vec<f64>> {
        self.value(x)
    }

    fn is_autonomous(&self) -> bool {
        true
    }
}

/// Integer wave vectors `m` (one representative per `+-m` pair, DC
/// excluded) with `|m_d| <= N_d / 2` and `||m / N|| > cutoff`, or
/// `<= cutoff` when `high` is false.
fn band_bins(extents: &[usize], cutoff: f64, high: bool) -> Vec<Vec<i64>> {
    let ranges: Vec<i64> = extents.iter().map(|&n| (n / 2) as i64).collect();
    let mut out = Vec::new();
    let mut m: Vec<i64> = ranges.iter().map(|r| -r).collect();
    loop {
        let first_nonzero = m.iter().find(|&&v| v != 0);
        if matches!(first_nonzero, Some(&v) if v > 0) {
            let radial: f64 = m
                .iter()
                .zip(extents)
                .map(|(&v, &n)| (v as f64 / n as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            if (radial > cutoff) == high {
                out.push(m.clone());
            }
        }
        // odometer increment
        let mut d = m.len();
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            if m[d] < ranges[d] {
                m[d] += 1;
                break;
            }
            m[d] = -ranges[d];
        }
    }
}

/// A base field plus [`BandNoise`].
#[derive(Debug, Clone)]
pub struct PerturbedField<F> {
    base: F,
    noise: BandNoise,
}

impl<F: VelocityField> PerturbedField<F> {
    pub fn base(&self) -> &F {
        &self.base
    }

    pub fn noise(&self) -> &BandNoise {
        &self.noise
    }
}

impl<F: VelocityField> VelocityField for PerturbedField<F> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut v = self.base.velocity(x, t)?;
        if self.noise.spec.amplitude == 0.0 {
            return Ok(v);
        }
        for (a, n) in v.iter_mut().zip(self.noise.value(x)?) {
            *a += n;
        }
        Ok(v)
    }

    fn is_autonomous(&self) -> bool {
        self.base.is_autonomous()
    }
}

/// Wraps `field` with band noise whose bins are exact on `lattice`.
pub fn inject_band_noise<F: VelocityField>(field: F, lattice: &Lattice, spec: NoiseSpec) -> Result<PerturbedField<F>> {
    check_dim(lattice.dims(), field.dim())?;
    let noise = BandNoise::new(lattice, field.dim(), spec)?;
    Ok(PerturbedField { base: field, noise })
}
