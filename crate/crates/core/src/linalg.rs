//! Small dense linear-algebra helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Condition estimates above this are treated as numerically singular.
pub const CONDITION_LIMIT: f64 = 1e14;

/// Spectral condition number `σ_max / σ_min`; infinite for a singular matrix.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Largest singular value.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().singular_values().max()
}

/// Solves `a x = b` by LU after checking the condition estimate of `a`.
///
/// Returns the solution and the condition estimate.
pub fn guarded_solve(a: DMatrix<f64>, b: &DMatrix<f64>, limit: f64) -> Result<(DMatrix<f64>, f64)> {
    let condition = condition_number(&a);
    if !(condition <= limit) {
        return Err(Error::IllConditioned { condition, limit });
    }
    let x = a
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Numerical("LU solve hit a zero pivot".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entries in linear solve".into()));
    }
    Ok((x, condition))
}

/// Solves `a x = b` by LU without a conditioning guard.
pub fn solve(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let x = a
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Numerical("LU solve hit a zero pivot".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entries in linear solve".into()));
    }
    Ok(x)
}

pub fn solve_vec(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let x = a
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Numerical("LU solve hit a zero pivot".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entries in linear solve".into()));
    }
    Ok(x)
}

/// Symmetric part `(A + Aᵀ)/2`.
pub fn symmetric_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Extreme eigenvalues of a symmetric matrix.
pub fn symmetric_extremes(a: &DMatrix<f64>) -> (f64, f64) {
    if a.is_empty() {
        return (0.0, 0.0);
    }
    let ev = a.clone().symmetric_eigenvalues();
    (ev.min(), ev.max())
}

/// Eigenvalues of a general real square matrix via a real Schur form.
pub fn complex_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if a.is_empty() {
        return Ok(Vec::new());
    }
    let schur = nalgebra::Schur::try_new(a.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Lower Cholesky factor of a symmetric positive semi-definite matrix.
///
/// When the plain factorization fails, the smallest diagonal shift of the form
/// `10^k · 1e-12 · trace/m` that makes it succeed is added. Returns the factor
/// and the shift actually used.
pub fn jittered_cholesky(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let m = a.nrows();
    let sym = symmetric_part(a);
    if let Some(ch) = sym.clone().cholesky() {
        return Ok((ch.l(), 0.0));
    }
    let base = 1e-12 * sym.trace().abs().max(f64::MIN_POSITIVE) / m.max(1) as f64;
    let mut jitter = base;
    for _ in 0..12 {
        let mut shifted = sym.clone();
        for i in 0..m {
            shifted[(i, i)] += jitter;
        }
        if let Some(ch) = shifted.cholesky() {
            return Ok((ch.l(), jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(format!(
        "Cholesky failed even with diagonal jitter {jitter:.3e}; matrix is not PSD"
    )))
}

/// `Σ_i w_i v_i²`, the quadratic form of a diagonal weight.
pub fn diag_quadratic(v: &DVector<f64>, w: &DVector<f64>) -> f64 {
    v.iter().zip(w.iter()).map(|(x, wi)| wi * x * x).sum()
}

/// `vᵀ A v`.
pub fn quadratic(v: &DVector<f64>, a: &DMatrix<f64>) -> f64 {
    v.dot(&(a * v))
}

/// `Tr(A B)` without forming the product.
pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut t = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            t += a[(i, k)] * b[(k, i)];
        }
    }
    t
}

/// Relative difference `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_diff(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_of_product_matches_dense() {
        let a = DMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 - 2.5);
        let b = DMatrix::from_fn(4, 3, |i, j| ((i + 2 * j) % 5) as f64);
        assert!((trace_of_product(&a, &b) - (&a * &b).trace()).abs() < 1e-12);
    }

    #[test]
    fn guarded_solve_rejects_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DMatrix::from_element(2, 1, 1.0);
        assert!(matches!(
            guarded_solve(a, &b, CONDITION_LIMIT),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn complex_pair_is_conjugate() {
        // rotation by 90 degrees
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let mut ev = complex_eigenvalues(&a).unwrap();
        ev.sort_by(|x, y| x.im.partial_cmp(&y.im).unwrap());
        assert!((ev[0].im + 1.0).abs() < 1e-12 && (ev[1].im - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let a = &v * v.transpose();
        let (l, jitter) = jittered_cholesky(&a).unwrap();
        assert!(jitter > 0.0);
        let rec = &l * l.transpose();
        assert!((rec - a).norm() < 1e-6);
    }
}
