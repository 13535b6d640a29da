use nalgebra::DMatrix;

use crate::datamatrix::ObservationMask;

/// Soft-threshold the singular values of `x` by `tau`.
pub fn singular_value_threshold(x: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let svd = crate::svd::thin_svd(x);
    let shrunk = svd.sigma.map(|s| (s - tau).max(0.0));
    &svd.u * DMatrix::from_diagonal(&shrunk) * svd.v.transpose()
}

/// ‖X‖_* + μ/2‖P_Ω(X − M)‖².
pub fn svt_objective(x: &DMatrix<f64>, data: &DMatrix<f64>, mask: &ObservationMask, mu: f64) -> f64 {
    super::nuclear_norm(x) + 0.5 * mu * super::masked_sq(x, data, mask)
}

/// Proximal gradient on ‖X‖_* + μ/2‖P_Ω(X − M)‖² with step 1/μ:
/// X ← SVT_{1/μ}(X − P_Ω(X − M)). Stops once the objective decreases by
/// less than 1e-10.
pub fn svt_oracle(data: &DMatrix<f64>, mask: &ObservationMask, mu: f64, max_iters: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(data.nrows(), data.ncols());
    let mut obj = svt_objective(&x, data, mask, mu);
    for _ in 0..max_iters {
        let mut g = x.clone();
        for (r, c) in mask.entries() {
            g[(r, c)] -= x[(r, c)] - data[(r, c)];
        }
        let next = singular_value_threshold(&g, 1.0 / mu);
        let next_obj = svt_objective(&next, data, mask, mu);
        x = next;
        let decrease = obj - next_obj;
        obj = next_obj;
        if decrease < 1e-10 {
            break;
        }
    }
    x
}
