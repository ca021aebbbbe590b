//! Small dense linear-algebra helpers shared by the samplers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Returns `(m + m') / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factorisation of a symmetric positive definite matrix.
pub fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if m.nrows() != m.ncols() {
        return Err(Error::dimension(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("matrix has non-finite entries"));
    }
    Cholesky::new(symmetrize(m)).ok_or_else(|| {
        Error::numerical(format!(
            "matrix is not positive definite (condition number ~{:.3e})",
            condition_number(m)
        ))
    })
}

/// Ratio of the largest to the smallest absolute eigenvalue of the symmetric part.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min = eig
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of an SPD matrix through its Cholesky factor.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&cholesky(m)?.inverse()))
}

/// A square-root factor `L` with `L L' = m` for a symmetric positive semidefinite matrix.
///
/// Tries Cholesky first and falls back to an eigendecomposition with negative
/// eigenvalues (rounding noise) clamped to zero.
pub fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrize(m);
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("covariance has non-finite entries"));
    }
    if let Some(chol) = Cholesky::new(sym.clone()) {
        return Ok(chol.l());
    }
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let tol = -1e-9 * scale.max(1e-300);
    if eig.eigenvalues.iter().any(|&v| v < tol) {
        return Err(Error::numerical(format!(
            "covariance is indefinite (smallest eigenvalue {:.3e})",
            eig.eigenvalues.min()
        )));
    }
    let mut factor = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        factor.column_mut(j).scale_mut(s);
    }
    Ok(factor)
}

/// Log density of `N(x; mean, L L')` given the lower Cholesky factor `L`.
pub fn log_mvn_density_chol(x: &[f64], mean: &[f64], chol_l: &DMatrix<f64>) -> f64 {
    let n = x.len();
    let diff = DVector::from_iterator(n, x.iter().zip(mean).map(|(a, b)| a - b));
    let z = chol_l
        .solve_lower_triangular(&diff)
        .expect("Cholesky factor has a zero diagonal");
    let log_det: f64 = chol_l.diagonal().iter().map(|d| d.ln()).sum();
    -0.5 * (n as f64 * LN_2PI + z.norm_squared()) - log_det
}

/// Log density of `N(x; mean, cov)`.
pub fn log_mvn_density(x: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cholesky(cov)?;
    Ok(log_mvn_density_chol(x, mean, &chol.l()))
}

/// Fills a vector with independent standard normal draws.
pub fn standard_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Draws `mean + factor * z` with `z ~ N(0, I)`.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let z = standard_normal(factor.ncols(), rng);
    mean + factor * z
}

/// Lower-triangular Cholesky factor of an SPD matrix, as a plain matrix.
pub fn lower_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(cholesky(m)?.l())
}

/// Inverse of a lower-triangular matrix.
pub fn invert_lower(l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    l.solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::numerical("triangular matrix is singular"))
}
