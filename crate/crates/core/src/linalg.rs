//! Thin helpers over `faer` shared by the data, estimator and simulation code.
//!
//! `faer` is built without its rayon backend, so every kernel here runs
//! sequentially and returns bit-identical results regardless of how many
//! replicate threads call into it.

use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition with eigenvalues in descending order.
pub(crate) struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Mat<f64>,
}

/// Eigendecomposition of a symmetric matrix. Eigenvalues are sorted
/// descending and each eigenvector is signed so that its largest-magnitude
/// entry (first on ties) is positive.
pub(crate) fn sym_eigen(m: MatRef<'_, f64>) -> Result<SymEigen> {
    check_finite(m, "matrix passed to eigendecomposition")?;
    let n = m.nrows();
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    // faer returns ascending order
    let values: Vec<f64> = (0..n).rev().map(|k| s[k]).collect();
    let mut vectors = Mat::<f64>::from_fn(n, n, |i, j| u[(i, n - 1 - j)]);
    for j in 0..n {
        let col = vectors.col_as_slice_mut(j);
        let mut best = 0usize;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.iter_mut().for_each(|v| *v = -*v);
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    Ok(SymEigen { values, vectors })
}

/// Eigenvalues only, descending.
pub(crate) fn sym_eigenvalues(m: MatRef<'_, f64>) -> Result<Vec<f64>> {
    check_finite(m, "matrix passed to eigendecomposition")?;
    let mut values = m
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    values.reverse();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    Ok(values)
}

pub(crate) fn check_finite(m: MatRef<'_, f64>, what: &str) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFinite(what.to_string()));
            }
        }
    }
    Ok(())
}

/// `A Aᵗ / scale`, symmetrized.
pub(crate) fn outer_gram(a: MatRef<'_, f64>, scale: f64) -> Mat<f64> {
    let prod = a * a.transpose();
    let n = prod.nrows();
    Mat::from_fn(n, n, |i, j| 0.5 * (prod[(i, j)] + prod[(j, i)]) / scale)
}

/// `Uᵗ v`.
pub(crate) fn transpose_times(u: MatRef<'_, f64>, v: &[f64]) -> Vec<f64> {
    debug_assert_eq!(u.nrows(), v.len());
    (0..u.ncols())
        .map(|k| {
            let col = u.col(k);
            let mut acc = 0.0;
            for (i, vi) in v.iter().enumerate() {
                acc += col[i] * vi;
            }
            acc
        })
        .collect()
}

/// Sample mean and standard deviation (denominator `n - 1`).
pub(crate) fn mean_sd(values: impl ExactSizeIterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Symmetric function of a symmetric matrix from its eigendecomposition:
/// `V diag(f(values)) Vᵗ`.
pub(crate) fn spectral_function(eig: &SymEigen, f: impl Fn(f64) -> f64) -> Mat<f64> {
    let n = eig.vectors.nrows();
    let k = eig.values.len();
    let scaled = Mat::<f64>::from_fn(n, k, |i, j| eig.vectors[(i, j)] * f(eig.values[j]));
    let full = &scaled * eig.vectors.transpose();
    Mat::from_fn(n, n, |i, j| 0.5 * (full[(i, j)] + full[(j, i)]))
}

/// Compensated (Neumaier) summation; order of the input defines the result.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_is_descending_and_sign_fixed() {
        let m = Mat::<f64>::from_fn(3, 3, |i, j| if i == j { (i + 1) as f64 } else { 0.5 });
        let eig = sym_eigen(m.as_ref()).unwrap();
        assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
        for j in 0..3 {
            let col = eig.vectors.col_as_slice(j);
            let big = col.iter().cloned().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            assert!(big > 0.0);
        }
        let rebuilt = spectral_function(&eig, |x| x);
        for i in 0..3 {
            for j in 0..3 {
                assert!((rebuilt[(i, j)] - m[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }

    #[test]
    fn rejects_non_finite() {
        let m = Mat::<f64>::from_fn(2, 2, |i, _| if i == 0 { f64::NAN } else { 1.0 });
        assert!(sym_eigen(m.as_ref()).is_err());
    }
}
