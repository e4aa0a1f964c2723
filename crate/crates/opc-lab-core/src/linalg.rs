//! Small linear-algebra helpers shared by the environment, model, and ILC code.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{LabError, LabResult};

/// Relative eigenvalue tolerance below which a PSD matrix is treated as exactly
/// singular along that direction.
const PSD_CLAMP: f64 = 1e-12;

/// Reciprocal-condition threshold below which SPD solves refuse to proceed.
pub const RCOND_LIMIT: f64 = 1e-12;

/// Symmetric square root of a positive semi-definite matrix.
///
/// Eigenvalues within a small negative tolerance of zero are clamped to zero
/// (roundoff on singular directions); anything more negative is rejected.
pub fn psd_sqrt(mat: &DMatrix<f64>, context: &'static str) -> LabResult<DMatrix<f64>> {
    let n = mat.nrows();
    if n != mat.ncols() {
        return Err(LabError::DimensionMismatch {
            context,
            expected: n,
            actual: mat.ncols(),
        });
    }
    let sym = (mat + mat.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let tol = PSD_CLAMP * scale.max(1.0);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -tol {
            return Err(LabError::NotPsd {
                context,
                eigenvalue: *v,
            });
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Solves `mat * x = rhs` for symmetric positive-definite `mat`.
///
/// Refuses when the reciprocal condition estimate (ratio of extreme
/// eigenvalues) falls below [`RCOND_LIMIT`].
pub fn solve_spd(
    mat: &DMatrix<f64>,
    rhs: &DVector<f64>,
    context: &'static str,
) -> LabResult<DVector<f64>> {
    let sym = (mat + mat.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let rcond = if max > 0.0 { min / max } else { 0.0 };
    if !(rcond > RCOND_LIMIT) {
        return Err(LabError::SingularSystem { context, rcond });
    }
    let chol = sym
        .cholesky()
        .ok_or(LabError::SingularSystem { context, rcond })?;
    Ok(chol.solve(rhs))
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(mat: &DMatrix<f64>) -> f64 {
    if mat.is_empty() {
        return 0.0;
    }
    mat.clone().singular_values().max()
}

/// Draws `N(mean, sqrt_cov * sqrt_cov^T)` using a precomputed covariance root.
pub fn sample_gaussian<R: Rng>(
    mean: &DVector<f64>,
    sqrt_cov: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + sqrt_cov * z
}
