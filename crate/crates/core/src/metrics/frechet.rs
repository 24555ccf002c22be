//! Fréchet distance between Gaussians fitted to two feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::PointSet;
use crate::error::{check_dim, invalid, Result};

/// Largest feature dimension accepted by [`frechet_distance`].
pub const FRECHET_MAX_DIM: usize = 64;

/// Eigenvalues above `-EIGEN_CLAMP` are treated as rounding noise and set
/// to zero; anything more negative is an error.
pub const EIGEN_CLAMP: f64 = 1e-8;

/// Sample mean and unbiased (`n - 1`) covariance.
pub fn moments(set: &PointSet) -> (DVector<f64>, DMatrix<f64>) {
    let n = set.len();
    let d = set.dim();
    let mut mean = DVector::zeros(d);
    for p in set.points() {
        mean += DVector::from_column_slice(p);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for p in set.points() {
        let c = DVector::from_column_slice(p) - &mean;
        cov += &c * c.transpose();
    }
    cov /= (n as f64 - 1.0).max(1.0);
    (mean, cov)
}

fn psd_sqrt(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -EIGEN_CLAMP {
            return Err(invalid(what, format!("matrix has eigenvalue {v:e}, not positive semi-definite")));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// `||m_a - m_b||^2 + Tr(C_a + C_b - 2 (C_a C_b)^{1/2})`.
///
/// The cross term is evaluated as `Tr sqrt(S C_b S)` with `S = sqrt(C_a)`,
/// which has the same eigenvalues as `C_a C_b` but is symmetric.
pub fn frechet_from_moments(
    mean_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mean_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<f64> {
    let d = mean_a.len();
    check_dim(d, mean_b.len())?;
    if cov_a.shape() != (d, d) || cov_b.shape() != (d, d) {
        return Err(invalid("covariance", "shape must be D x D"));
    }
    let s = psd_sqrt(cov_a, "covariance A")?;
    let cross = psd_sqrt(&(&s * cov_b * &s), "covariance product")?;
    let mean_term = (mean_a - mean_b).norm_squared();
    let value = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
    Ok(value.max(0.0))
}

/// Fréchet distance between Gaussian fits of `a` and `b`.
pub fn frechet_distance(a: &PointSet, b: &PointSet) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    let d = a.dim();
    if d > FRECHET_MAX_DIM {
        return Err(invalid("dimension", format!("{d} exceeds {FRECHET_MAX_DIM}")));
    }
    if a.len() <= d || b.len() <= d {
        return Err(invalid("point sets", format!("need more than {d} points per set")));
    }
    let (ma, ca) = moments(a);
    let (mb, cb) = moments(b);
    frechet_from_moments(&ma, &ca, &mb, &cb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_sets_are_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = PointSet::new((0..40).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
            .unwrap();
        assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-8);
    }

    #[test]
    fn one_dimensional_mean_shift() {
        // {-1, 1} has mean 0 and unbiased variance 2; scale to variance 1
        let r = 0.5f64.sqrt();
        let a = PointSet::new(vec![vec![-r], vec![r]]).unwrap();
        let b = PointSet::new(vec![vec![3.0 - r], vec![3.0 + r]]).unwrap();
        assert!((frechet_distance(&a, &b).unwrap() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_covariances_by_hand() {
        let z = DVector::zeros(2);
        let ca = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let cb = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        assert!((frechet_from_moments(&z, &ca, &z, &cb).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_indefinite_and_small_sets() {
        let z = DVector::zeros(2);
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.1]));
        let id = DMatrix::identity(2, 2);
        assert!(frechet_from_moments(&z, &bad, &z, &id).is_err());
        let tiny = PointSet::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(frechet_distance(&tiny, &tiny).is_err());
    }
}
