//! Thin SVD through faer. nalgebra's bidiagonal SVD loses accuracy on about
//! one in ten random rank-deficient matrices (reconstruction error of order
//! ‖X‖), which breaks both the initialization and the oracle.

use nalgebra::{DMatrix, DVector};

/// X = U·diag(σ)·Vᵀ with σ nonincreasing; U is m×k, V is n×k, k = min(m, n).
pub(crate) struct Svd {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub(crate) fn thin_svd(x: &DMatrix<f64>) -> Svd {
    let (m, n) = x.shape();
    let k = m.min(n);
    if k == 0 {
        return Svd {
            u: DMatrix::zeros(m, 0),
            sigma: DVector::zeros(0),
            v: DMatrix::zeros(n, 0),
        };
    }
    let mat = faer::Mat::<f64>::from_fn(m, n, |i, j| x[(i, j)]);
    let svd = mat.thin_svd().expect("SVD of a finite matrix converges");
    let (fu, fs, fv) = (svd.U(), svd.S().column_vector(), svd.V());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| fs[b].total_cmp(&fs[a]));
    Svd {
        u: DMatrix::from_fn(m, k, |i, c| fu[(i, order[c])]),
        sigma: DVector::from_fn(k, |c, _| fs[order[c]]),
        v: DMatrix::from_fn(n, k, |j, c| fv[(j, order[c])]),
    }
}

pub(crate) fn singular_values(x: &DMatrix<f64>) -> Vec<f64> {
    let (m, n) = x.shape();
    if m.min(n) == 0 {
        return Vec::new();
    }
    let mat = faer::Mat::<f64>::from_fn(m, n, |i, j| x[(i, j)]);
    let mut sv = mat.singular_values().expect("SVD of a finite matrix converges");
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Eigenvalues of a symmetric matrix, nondecreasing.
pub(crate) fn symmetric_eigenvalues(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows();
    if n == 0 {
        return Vec::new();
    }
    let mat = faer::Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (x[(i, j)] + x[(j, i)]));
    let mut ev = mat
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .expect("eigendecomposition of a finite symmetric matrix converges");
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}
