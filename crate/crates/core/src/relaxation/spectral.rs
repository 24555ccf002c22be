//! Frequency-domain diagnostics: band energies and kernel gains.
//!
//! Frequencies are in cycles per lattice site, so Nyquist is 0.5. A lattice
//! frequency vector belongs to the high band iff its Euclidean norm exceeds
//! the cutoff.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{make_kernel, GaussianKernel1D};
use crate::error::{invalid, Result};
use crate::flowfield::{GridField, NYQUIST};

/// Gain of the separable kernel over the lattice frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelGain {
    pub sigma: f64,
    /// Smallest `|G(omega)|` with `||omega|| <= cutoff`.
    pub low_band_min: f64,
    /// Largest `|G(omega)|` with `||omega|| > cutoff`.
    pub high_band_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub cutoff: f64,
    pub low: f64,
    pub high: f64,
    /// Energy `sum |v|^2` over sites, computed in the spatial domain.
    pub total: f64,
    pub kernel: Option<KernelGain>,
}

impl SpectralReport {
    pub fn high_fraction(&self) -> f64 {
        let s = self.low + self.high;
        if s > 0.0 {
            self.high / s
        } else {
            0.0
        }
    }

    pub fn low_fraction(&self) -> f64 {
        let s = self.low + self.high;
        if s > 0.0 {
            self.low / s
        } else {
            1.0
        }
    }

    /// `|low + high - total|`.
    pub fn parseval_residual(&self) -> f64 {
        (self.low + self.high - self.total).abs()
    }
}

fn signed_freq(k: usize, n: usize) -> f64 {
    let m = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    m / n as f64
}

/// Radial frequency of every bin in row-major order.
fn radial_frequencies(extents: &[usize]) -> Vec<f64> {
    let len: usize = extents.iter().product();
    let mut out = Vec::with_capacity(len);
    let mut idx = vec![0usize; extents.len()];
    for _ in 0..len {
        let r2: f64 = idx
            .iter()
            .zip(extents)
            .map(|(&k, &n)| signed_freq(k, n).powi(2))
            .sum();
        out.push(r2.sqrt());
        for d in (0..extents.len()).rev() {
            idx[d] += 1;
            if idx[d] < extents[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

/// In-place multi-dimensional forward DFT of a row-major array.
fn fft_nd(data: &mut [Complex64], extents: &[usize]) {
    let mut planner = FftPlanner::<f64>::new();
    for axis in 0..extents.len() {
        let n = extents[axis];
        let stride: usize = extents[axis + 1..].iter().product();
        let outer: usize = extents[..axis].iter().product();
        let fft = planner.plan_fft_forward(n);
        let mut line = vec![Complex64::default(); n];
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * n * stride + inner;
                for (k, v) in line.iter_mut().enumerate() {
                    *v = data[base + k * stride];
                }
                fft.process(&mut line);
                for (k, v) in line.iter().enumerate() {
                    data[base + k * stride] = *v;
                }
            }
        }
    }
}

fn check_cutoff(cutoff: f64) -> Result<()> {
    if !(cutoff.is_finite() && cutoff > 0.0 && cutoff <= NYQUIST) {
        return Err(invalid(
            "cutoff",
            format!("must lie in (0, {NYQUIST}] cycles per site, got {cutoff}"),
        ));
    }
    Ok(())
}

/// Splits the energy of every velocity component at radial frequency `cutoff`.
pub fn band_energy(field: &GridField, cutoff: f64) -> Result<SpectralReport> {
    check_cutoff(cutoff)?;
    let extents = field.lattice().extents();
    let len = field.lattice().len();
    let radial = radial_frequencies(extents);
    let (mut low, mut high) = (0.0, 0.0);
    for c in 0..field.channels() {
        let mut buf: Vec<Complex64> = field.channel(c).into_iter().map(|v| Complex64::new(v, 0.0)).collect();
        fft_nd(&mut buf, extents);
        for (x, &r) in buf.iter().zip(&radial) {
            let e = x.norm_sqr() / len as f64;
            if r > cutoff {
                high += e;
            } else {
                low += e;
            }
        }
    }
    let total = field.values().iter().map(|v| v * v).sum();
    Ok(SpectralReport {
        cutoff,
        low,
        high,
        total,
        kernel: None,
    })
}

/// [`band_energy`] plus the gain of the separable `sigma` kernel over the
/// same lattice frequencies.
pub fn band_energy_with_kernel(field: &GridField, cutoff: f64, sigma: f64) -> Result<SpectralReport> {
    let mut report = band_energy(field, cutoff)?;
    let kernel = make_kernel(sigma)?;
    let extents = field.lattice().extents();
    let per_axis: Vec<Vec<f64>> = extents
        .iter()
        .map(|&n| (0..n).map(|k| axis_gain(&kernel, signed_freq(k, n))).collect())
        .collect();
    let radial = radial_frequencies(extents);
    let mut low_min = f64::INFINITY;
    let mut high_max: f64 = 0.0;
    let mut idx = vec![0usize; extents.len()];
    for &r in &radial {
        let g: f64 = idx.iter().enumerate().map(|(d, &k)| per_axis[d][k]).product::<f64>().abs();
        if r > cutoff {
            high_max = high_max.max(g);
        } else {
            low_min = low_min.min(g);
        }
        for d in (0..extents.len()).rev() {
            idx[d] += 1;
            if idx[d] < extents[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    report.kernel = Some(KernelGain {
        sigma,
        low_band_min: low_min,
        high_band_max: high_max,
    });
    Ok(report)
}

fn axis_gain(kernel: &GaussianKernel1D, freq: f64) -> f64 {
    kernel.gain(std::f64::consts::TAU * freq)
}

/// Squared DFT magnitude of the zero-padded kernel at bins `0..=extent/2`,
/// i.e. frequencies `k / extent` cycles per site from DC to Nyquist.
pub fn attenuation_profile(sigma: f64, extent: usize) -> Result<Vec<f64>> {
    let kernel = make_kernel(sigma)?;
    let len = kernel.taps().len();
    if extent < len {
        return Err(invalid(
            "extent",
            format!("must be at least the kernel length {len}, got {extent}"),
        ));
    }
    // centre tap at index 0, negative offsets wrapped to the end
    let mut buf = vec![Complex64::default(); extent];
    let r = kernel.radius() as isize;
    for j in -r..=r {
        buf[j.rem_euclid(extent as isize) as usize] = Complex64::new(kernel.tap(j), 0.0);
    }
    FftPlanner::<f64>::new().plan_fft_forward(extent).process(&mut buf);
    Ok(buf[..=extent / 2].iter().map(|c| c.norm_sqr()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowfield::Lattice;
    use std::f64::consts::TAU;

    /// Direct O(N^2) DFT energy split for a 1D signal.
    fn naive_split(x: &[f64], cutoff: f64) -> (f64, f64) {
        let n = x.len();
        let (mut lo, mut hi) = (0.0, 0.0);
        for k in 0..n {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, v) in x.iter().enumerate() {
                let a = -TAU * (k * j) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            let e = (re * re + im * im) / n as f64;
            if signed_freq(k, n).abs() > cutoff {
                hi += e;
            } else {
                lo += e;
            }
        }
        (lo, hi)
    }

    fn sines(n: usize, terms: &[(f64, usize)]) -> GridField {
        let l = Lattice::unit(vec![n]).unwrap();
        GridField::from_fn(l, 1, 0.0, |x| {
            vec![terms.iter().map(|&(a, m)| a * (TAU * m as f64 * x[0] / n as f64).sin()).sum()]
        })
        .unwrap()
    }

    #[test]
    fn constant_field_has_no_high_band() {
        let l = Lattice::unit(vec![8, 8]).unwrap();
        let g = GridField::from_fn(l, 2, 0.0, |_| vec![1.0, -2.0]).unwrap();
        let r = band_energy(&g, 0.1).unwrap();
        assert!(r.high < 1e-20);
        assert!(r.parseval_residual() < 1e-9);
    }

    #[test]
    fn low_sinusoid_stays_low() {
        let g = sines(64, &[(1.0, 3)]);
        let r = band_energy(&g, 0.25).unwrap();
        assert!(r.low_fraction() >= 1.0 - 1e-9);
    }

    #[test]
    fn two_sinusoids_split_four_to_one() {
        let g = sines(64, &[(1.0, 4), (2.0, 24)]);
        let r = band_energy(&g, 0.25).unwrap();
        assert!((r.high / r.low - 4.0).abs() < 1e-6);
        assert!(r.parseval_residual() < 1e-9 * r.total.max(1.0));
        let (lo, hi) = naive_split(g.values(), 0.25);
        assert!((lo - r.low).abs() < 1e-9 && (hi - r.high).abs() < 1e-9);
    }

    #[test]
    fn cutoff_bounds() {
        let g = sines(16, &[(1.0, 1)]);
        assert!(band_energy(&g, 0.0).is_err());
        assert!(band_energy(&g, 0.51).is_err());
        assert!(band_energy(&g, 0.5).is_ok());
    }

    #[test]
    fn kernel_gain_stats() {
        let g = sines(64, &[(1.0, 2)]);
        let r = band_energy_with_kernel(&g, 0.1, 1.0).unwrap();
        let k = r.kernel.unwrap();
        assert!(k.high_band_max < k.low_band_min);
        assert!(k.low_band_min <= 1.0 && k.high_band_max > 0.0);
    }

    #[test]
    fn attenuation_dc_and_nyquist() {
        let p = attenuation_profile(1.0, 64).unwrap();
        assert_eq!(p.len(), 33);
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!(p[32] < p[0]);
        assert!(attenuation_profile(1.0, 6).is_err());
    }

    #[test]
    fn attenuation_matches_continuous_gaussian_at_low_frequency() {
        let n = 128;
        let p = attenuation_profile(1.0, n).unwrap();
        for (k, g) in p.iter().enumerate().take(n / 4 + 1) {
            let w = TAU * k as f64 / n as f64;
            let pred = (-w * w).exp();
            assert!((g - pred).abs() <= 0.05 * pred, "k={k} g={g} pred={pred}");
        }
    }

    #[test]
    fn attenuation_monotone_for_small_sigma() {
        for s in [0.3, 0.5, 0.75, 1.0] {
            for n in [16, 33, 64, 256] {
                let p = attenuation_profile(s, n).unwrap();
                for w in p.windows(2) {
                    assert!(w[1] <= w[0] + 1e-9, "sigma={s} n={n}");
                }
            }
        }
    }

    #[test]
    fn attenuation_ripple_is_tiny_for_wide_kernels() {
        // truncation at 3 sigma leaves sidelobes of order 1e-6 in |G|^2
        for s in [1.5, 2.0, 3.0, 5.0] {
            let p = attenuation_profile(s, 256).unwrap();
            for w in p.windows(2) {
                assert!(w[1] <= w[0] + 2e-6, "sigma={s}");
            }
        }
    }

    #[test]
    fn profile_equals_cosine_gain() {
        let k = make_kernel(1.3).unwrap();
        let p = attenuation_profile(1.3, 40).unwrap();
        for (i, g) in p.iter().enumerate() {
            let c = k.gain(TAU * i as f64 / 40.0);
            assert!((g - c * c).abs() < 1e-12);
        }
    }
}
