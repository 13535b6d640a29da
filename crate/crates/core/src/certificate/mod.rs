//! Global-optimality certificate for a stationary factored point.
//!
//! The data and load-flow terms of the objective are folded into one linear
//! map B: ℝ^{m×n} → ℝ^L and offset d, so that
//! (μ/2)‖B(X) − d‖² = (μ/2)‖P_Ω(X − M)‖² + (ν/2)Σ_l‖E_ll(X) + Σ_j E_lj(X) − f_l‖².
//! A stationary (U, V) is a global minimum of the convex problem whenever
//! ‖μB*(B(UV) − d)‖₂ ≤ 1.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamatrix::ObservationMask;
use crate::error::{Error, Result};
use crate::linflow::AreaMaps;

const POWER_TOL: f64 = 1e-8;
const POWER_MAX_STEPS: usize = 10_000;
const POWER_SEED: u64 = 0x5eed;

/// B and d. Rows are the observed entries in mask order followed by the
/// √(ν/μ)-scaled load-flow residual of every area.
#[derive(Clone, Debug)]
pub struct StackedOperator<'a> {
    m: usize,
    n: usize,
    entries: Vec<(usize, usize)>,
    flow: Option<&'a AreaMaps>,
    scale: f64,
    d: DVector<f64>,
}

pub fn build_b_d<'a>(
    mask: &ObservationMask,
    data: &DMatrix<f64>,
    maps: Option<&'a AreaMaps>,
    mu: f64,
    nu: f64,
) -> Result<StackedOperator<'a>> {
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
    }
    if !(nu >= 0.0) {
        return Err(Error::InvalidArgument(format!("nu must be nonnegative, got {nu}")));
    }
    if data.shape() != mask.shape() {
        return Err(Error::Dimension("data and mask shapes disagree".into()));
    }
    let (m, n) = data.shape();
    let entries: Vec<(usize, usize)> = mask.entries().collect();
    let flow = maps.filter(|_| nu > 0.0);
    if let Some(maps) = flow {
        if (maps.rows(), maps.n_phases()) != (m, n) {
            return Err(Error::Dimension(format!(
                "maps cover {}x{}, data is {m}x{n}",
                maps.rows(),
                maps.n_phases()
            )));
        }
    }
    let scale = (nu / mu).sqrt();
    let mut d: Vec<f64> = entries.iter().map(|&(r, c)| data[(r, c)]).collect();
    if let Some(maps) = flow {
        for l in 0..maps.n_areas() {
            d.extend(maps.target(l).iter().map(|f| scale * f));
        }
    }
    Ok(StackedOperator {
        m,
        n,
        entries,
        flow,
        scale,
        d: DVector::from_vec(d),
    })
}

impl StackedOperator<'_> {
    pub fn shape(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    /// L = |Ω| + load-flow residual dimension.
    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn n_entry_rows(&self) -> usize {
        self.entries.len()
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    fn check(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.shape() != (self.m, self.n) {
            return Err(Error::Dimension(format!(
                "operator acts on {}x{}, got {}x{}",
                self.m,
                self.n,
                x.nrows(),
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check(x)?;
        let mut out: Vec<f64> = self.entries.iter().map(|&(r, c)| x[(r, c)]).collect();
        if let Some(maps) = self.flow {
            for l in 0..maps.n_areas() {
                // residual minus its value at X = 0 is the linear part
                let lin = maps.residual(l, x)? + maps.target(l);
                out.extend(lin.iter().map(|e| self.scale * e));
            }
        }
        Ok(DVector::from_vec(out))
    }

    /// B*(z) = Σ_i z_i B_i.
    pub fn adjoint(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        if z.len() != self.len() {
            return Err(Error::Dimension(format!("operator has {} rows, got {}", self.len(), z.len())));
        }
        let mut out = DMatrix::zeros(self.m, self.n);
        for (k, &(r, c)) in self.entries.iter().enumerate() {
            out[(r, c)] += z[k];
        }
        if let Some(maps) = self.flow {
            let mut offset = self.entries.len();
            for l in 0..maps.n_areas() {
                let len = maps.residual_len(l);
                let zl = z.rows(offset, len) * self.scale;
                out += maps.residual_adjoint(l, &zl);
                offset += len;
            }
        }
        Ok(out)
    }

    /// B(X) − d.
    pub fn residual(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.apply(x)? - &self.d)
    }

    /// The coefficient matrix B_i of row `i`.
    pub fn row_matrix(&self, i: usize) -> Result<DMatrix<f64>> {
        if i >= self.len() {
            return Err(Error::InvalidArgument(format!("row {i} of {}", self.len())));
        }
        let mut e = DVector::zeros(self.len());
        e[i] = 1.0;
        self.adjoint(&e)
    }

    /// μB*(B(X) − d).
    pub fn dual_matrix(&self, x: &DMatrix<f64>, mu: f64) -> Result<DMatrix<f64>> {
        Ok(self.adjoint(&self.residual(x)?)? * mu)
    }
}

/// Largest singular value of `g` by power iteration on gᵀg from a fixed
/// random start; stops when successive estimates agree to relative `POWER_TOL`.
pub fn spectral_norm(g: &DMatrix<f64>) -> Result<f64> {
    let n = g.ncols();
    if g.is_empty() || g.iter().all(|&e| e == 0.0) {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    x /= x.norm();
    let mut sigma = 0.0;
    for _ in 0..POWER_MAX_STEPS {
        let y = g * &x;
        let next = y.norm();
        let z = g.tr_mul(&y);
        let zn = z.norm();
        if zn == 0.0 {
            return Ok(next);
        }
        x = z / zn;
        if (next - sigma).abs() <= POWER_TOL * next {
            return Ok(next);
        }
        sigma = next;
    }
    Err(Error::PowerIteration(POWER_MAX_STEPS))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1 {
    /// ‖μB*(B(X̄) − d)‖₂.
    pub spectral_norm: f64,
    pub pass: bool,
}

pub fn theorem1_check(x_bar: &DMatrix<f64>, op: &StackedOperator<'_>, mu: f64) -> Result<Theorem1> {
    let g = op.dual_matrix(x_bar, mu)?;
    let spectral_norm = spectral_norm(&g)?;
    Ok(Theorem1 {
        spectral_norm,
        pass: spectral_norm <= 1.0 + 1e-9,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stationarity {
    /// ‖μB*(B(UV) − d)Vᵀ + U‖_F.
    pub grad_u_norm: f64,
    /// ‖μB*(B(UV) − d)ᵀU + Vᵀ‖_F.
    pub grad_v_norm: f64,
    /// tr(GᵀUV) + tr(VᵀV) and tr(GᵀUV) + tr(UUᵀ), G = μB*(B(UV) − d).
    pub trace_residuals: (f64, f64),
    /// tr(UUᵀ) − tr(VᵀV).
    pub balance: f64,
}

pub fn stationarity_and_traces(u: &DMatrix<f64>, v: &DMatrix<f64>, op: &StackedOperator<'_>, mu: f64) -> Result<Stationarity> {
    if u.ncols() != v.nrows() {
        return Err(Error::Dimension("inner factor dimensions disagree".into()));
    }
    let x = u * v;
    let g = op.dual_matrix(&x, mu)?;
    let cross = g.dot(&x);
    Ok(Stationarity {
        grad_u_norm: (&g * v.transpose() + u).norm(),
        grad_v_norm: (g.tr_mul(u) + v.transpose()).norm(),
        trace_residuals: (cross + v.norm_squared(), cross + u.norm_squared()),
        balance: u.norm_squared() - v.norm_squared(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplementarySlackness {
    /// |⟨W̄, M̄⟩_F| with W̄ = [UUᵀ, UV; (UV)ᵀ, VᵀV], M̄₁ = I/2, M̄₄ = I/2 and
    /// M̄₂ = M̄₃ᵀ = (μ/2)B*(B(UV) − d).
    pub full: f64,
    /// |½(‖U‖² + ‖V‖²) − ‖U‖²|, the form left after substituting the trace
    /// identity tr(GᵀUV) = −‖U‖².
    pub reduced: f64,
}

pub fn complementary_slackness(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    op: &StackedOperator<'_>,
    mu: f64,
) -> Result<ComplementarySlackness> {
    if u.ncols() != v.nrows() {
        return Err(Error::Dimension("inner factor dimensions disagree".into()));
    }
    let x = u * v;
    let m2 = op.dual_matrix(&x, mu)? * 0.5;
    let (nu2, nv2) = (u.norm_squared(), v.norm_squared());
    // ⟨W₁, M₁⟩ + ⟨X, M₂⟩ + ⟨Xᵀ, M₃⟩ + ⟨W₂, M₄⟩
    let full = 0.5 * nu2 + 0.5 * nv2 + 2.0 * m2.dot(&x);
    Ok(ComplementarySlackness {
        full: full.abs(),
        reduced: (0.5 * (nu2 + nv2) - nu2).abs(),
    })
}

/// Smallest eigenvalue of the Schur complement M̄₁ − M̄₂M̄₄⁻¹M̄₃ = ½I − 2M̄₂M̄₂ᵀ.
pub fn schur_min_eigenvalue(x_bar: &DMatrix<f64>, op: &StackedOperator<'_>, mu: f64) -> Result<f64> {
    let m2 = op.dual_matrix(x_bar, mu)? * 0.5;
    let s = DMatrix::identity(op.m, op.m) * 0.5 - (&m2 * m2.transpose()) * 2.0;
    Ok(crate::svd::symmetric_eigenvalues(&s)[0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub mu: f64,
    pub spectral_norm: f64,
    pub theorem1_pass: bool,
    pub grad_u_norm: f64,
    pub grad_v_norm: f64,
    pub trace_residuals: (f64, f64),
    pub balance: f64,
    pub comp_slack_residual: f64,
    pub comp_slack_reduced: f64,
    pub schur_min_eigenvalue: f64,
}

/// Every check at once for the factors (U, V) of X̄ = UV.
pub fn certify(u: &DMatrix<f64>, v: &DMatrix<f64>, op: &StackedOperator<'_>, mu: f64) -> Result<CertificateReport> {
    let x = u * v;
    let t1 = theorem1_check(&x, op, mu)?;
    let st = stationarity_and_traces(u, v, op, mu)?;
    let cs = complementary_slackness(u, v, op, mu)?;
    Ok(CertificateReport {
        mu,
        spectral_norm: t1.spectral_norm,
        theorem1_pass: t1.pass,
        grad_u_norm: st.grad_u_norm,
        grad_v_norm: st.grad_v_norm,
        trace_residuals: st.trace_residuals,
        balance: st.balance,
        comp_slack_residual: cs.full,
        comp_slack_reduced: cs.reduced,
        schur_min_eigenvalue: schur_min_eigenvalue(&x, op, mu)?,
    })
}

/// ‖X‖_* + (μ/2)‖B(X) − d‖².
pub fn convex_objective(x: &DMatrix<f64>, op: &StackedOperator<'_>, mu: f64) -> Result<f64> {
    Ok(crate::completion::nuclear_norm(x) + 0.5 * mu * op.residual(x)?.norm_squared())
}

/// Proximal gradient on ‖X‖_* + (μ/2)‖B(X) − d‖² with step 1/(μ‖B‖²), the
/// load-flow terms included. Stops once the objective decreases by less
/// than 1e-10.
pub fn svt_oracle_operator(op: &StackedOperator<'_>, mu: f64, max_iters: usize) -> Result<DMatrix<f64>> {
    // ‖B‖² = ‖B*B‖₂ by power iteration on the Gram operator
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut x = DMatrix::from_fn(op.m, op.n, |_, _| rng.random_range(-1.0..1.0));
    x /= x.norm();
    let mut lip = 0.0;
    for step in 0..=POWER_MAX_STEPS {
        if step == POWER_MAX_STEPS {
            return Err(Error::PowerIteration(POWER_MAX_STEPS));
        }
        let y = op.adjoint(&op.apply(&x)?)?;
        let next = y.norm();
        if next == 0.0 {
            break;
        }
        x = y / next;
        if (next - lip).abs() <= POWER_TOL * next {
            lip = next;
            break;
        }
        lip = next;
    }
    let step = if lip > 0.0 { 1.0 / (mu * lip) } else { 1.0 / mu };
    let mut x = DMatrix::zeros(op.m, op.n);
    let mut obj = convex_objective(&x, op, mu)?;
    for _ in 0..max_iters {
        let grad = op.dual_matrix(&x, mu)?;
        let next = crate::completion::singular_value_threshold(&(&x - grad * step), step);
        let next_obj = convex_objective(&next, op, mu)?;
        x = next;
        let decrease = obj - next_obj;
        obj = next_obj;
        if decrease < 1e-10 {
            break;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests;
