//! Fixed-point linear load-flow model, its area truncation and the per-area
//! linear maps consumed by the estimator.
//!
//! For injections h = [Re s; Im s] the model predicts
//! v ≈ w + N·h and |v| ≈ |w| + K·h with
//! N = [Y⁻¹·diag(conj w)⁻¹, −j·Y⁻¹·diag(conj w)⁻¹] and K obtained by a first
//! order expansion of the modulus around w.

mod decentral;
mod maps;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::gridmodel::{AreaPartition, CMatrix, CVector, NetworkModel};

pub use decentral::{decentralized_flow, AreaFlowEstimate, DecentralizedFlow};
pub use maps::{build_area_maps, AreaMap, AreaMaps, RESIDUAL_COMPONENTS};

/// h = [Re s; Im s].
pub fn injection_vector(s: &CVector) -> DVector<f64> {
    let n = s.len();
    DVector::from_fn(2 * n, |k, _| if k < n { s[k].re } else { s[k - n].im })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearFlowModel {
    n_mat: Vec<CMatrix>,
    k_mat: Vec<DMatrix<f64>>,
    w: Vec<CVector>,
}

impl LinearFlowModel {
    /// Assemble from explicit per-time-step blocks.
    pub fn from_blocks(n_mat: Vec<CMatrix>, k_mat: Vec<DMatrix<f64>>, w: Vec<CVector>) -> Result<Self> {
        let t = n_mat.len();
        if t == 0 || k_mat.len() != t || w.len() != t {
            return Err(Error::Dimension("model needs the same positive number of N, K and w blocks".into()));
        }
        let p = w[0].len();
        for s in 0..t {
            if n_mat[s].shape() != (p, 2 * p) || k_mat[s].shape() != (p, 2 * p) || w[s].len() != p {
                return Err(Error::Dimension(format!("inconsistent block shapes at time step {s}")));
            }
        }
        Ok(Self { n_mat, k_mat, w })
    }

    pub fn time_steps(&self) -> usize {
        self.n_mat.len()
    }

    pub fn n_phases(&self) -> usize {
        self.w[0].len()
    }

    pub fn n(&self, t: usize) -> &CMatrix {
        &self.n_mat[t]
    }

    pub fn k(&self, t: usize) -> &DMatrix<f64> {
        &self.k_mat[t]
    }

    pub fn w(&self, t: usize) -> &CVector {
        &self.w[t]
    }

    /// (w + N·h, |w| + K·h) at time step `t`.
    pub fn predict(&self, t: usize, h: &DVector<f64>) -> (CVector, DVector<f64>) {
        let hc = h.map(|x| Complex64::new(x, 0.0));
        let v = &self.w[t] + &self.n_mat[t] * hc;
        let mag = self.w[t].map(|z| z.norm()) + &self.k_mat[t] * h;
        (v, mag)
    }
}

pub fn build_linear_model(net: &NetworkModel, t_steps: usize) -> Result<LinearFlowModel> {
    if t_steps == 0 {
        return Err(Error::InvalidArgument("need at least one time step".into()));
    }
    let w = net.no_load_voltage().clone();
    let p = w.len();
    if let Some(phase) = w.iter().position(|z| z.norm() == 0.0) {
        return Err(Error::DegenerateLinearization { phase });
    }
    // Y⁻¹·diag(conj w)⁻¹ scales column j of Y⁻¹ by 1/conj(w_j)
    let z = net.z_ll();
    let mut n = CMatrix::zeros(p, 2 * p);
    let minus_j = Complex64::new(0.0, -1.0);
    for j in 0..p {
        let scale = w[j].conj().inv();
        for i in 0..p {
            let a = z[(i, j)] * scale;
            n[(i, j)] = a;
            n[(i, p + j)] = minus_j * a;
        }
    }
    let k = DMatrix::from_fn(p, 2 * p, |i, c| {
        let rot = w[i].conj() / w[i].norm();
        (rot * n[(i, c)]).re
    });
    Ok(LinearFlowModel {
        n_mat: vec![n; t_steps],
        k_mat: vec![k; t_steps],
        w: vec![w; t_steps],
    })
}

/// Linear model with the couplings between non-neighboring areas removed.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedFlowModel {
    model: LinearFlowModel,
    partition: AreaPartition,
}

impl TruncatedFlowModel {
    pub fn linear(&self) -> &LinearFlowModel {
        &self.model
    }

    pub fn partition(&self) -> &AreaPartition {
        &self.partition
    }

    pub fn time_steps(&self) -> usize {
        self.model.time_steps()
    }

    pub fn n_phases(&self) -> usize {
        self.model.n_phases()
    }
}

/// Zero Ñ_ij and K̃_ij unless the phases of row i and of column j lie in the
/// same or in adjacent areas.
pub fn truncate_model(model: &LinearFlowModel, part: &AreaPartition) -> Result<TruncatedFlowModel> {
    let p = model.n_phases();
    if part.n_phases() != p {
        return Err(Error::Dimension(format!(
            "partition covers {} phases, model has {p}",
            part.n_phases()
        )));
    }
    let mut out = model.clone();
    for t in 0..model.time_steps() {
        for i in 0..p {
            for c in 0..2 * p {
                if !part.coupled(i, c % p) {
                    out.n_mat[t][(i, c)] = Complex64::new(0.0, 0.0);
                    out.k_mat[t][(i, c)] = 0.0;
                }
            }
        }
    }
    Ok(TruncatedFlowModel {
        model: out,
        partition: part.clone(),
    })
}

/// ‖N − Ñ‖_F / ‖N‖_F accumulated over all time steps.
pub fn truncation_error(model: &LinearFlowModel, truncated: &LinearFlowModel) -> Result<f64> {
    if model.time_steps() != truncated.time_steps() || model.n_phases() != truncated.n_phases() {
        return Err(Error::Dimension("models have different shapes".into()));
    }
    let mut diff = 0.0;
    let mut base = 0.0;
    for t in 0..model.time_steps() {
        diff += (model.n(t) - truncated.n(t)).norm_squared();
        base += model.n(t).norm_squared();
    }
    if base == 0.0 {
        return Err(Error::UndefinedMetric("‖N‖_F is zero".into()));
    }
    Ok((diff / base).sqrt())
}

/// Contribution T_{k,i} of the injections in area `area` to the prediction
/// at every phase i of that area and of its neighbors. Each term stacks
/// [Re, Im, magnitude] per time step (length 3T).
pub fn area_flow_terms(
    model: &TruncatedFlowModel,
    h: &[DVector<f64>],
    area: usize,
) -> Result<BTreeMap<usize, DVector<f64>>> {
    let part = model.partition();
    if area >= part.n_areas() {
        return Err(Error::UnknownArea(area));
    }
    check_injections(model, h)?;
    let p = model.n_phases();
    let t_steps = model.time_steps();
    let sources = part.members(area);
    let mut targets: Vec<usize> = part.members(area).to_vec();
    for &k in part.neighbors(area) {
        targets.extend_from_slice(part.members(k));
    }
    targets.sort_unstable();

    let mut out = BTreeMap::new();
    for &i in &targets {
        let mut term = DVector::zeros(RESIDUAL_COMPONENTS * t_steps);
        for t in 0..t_steps {
            let (n, k) = (model.linear().n(t), model.linear().k(t));
            let mut v = Complex64::new(0.0, 0.0);
            let mut mag = 0.0;
            for &j in sources {
                for c in [j, p + j] {
                    v += n[(i, c)] * h[t][c];
                    mag += k[(i, c)] * h[t][c];
                }
            }
            term[3 * t] = v.re;
            term[3 * t + 1] = v.im;
            term[3 * t + 2] = mag;
        }
        out.insert(i, term);
    }
    Ok(out)
}

fn check_injections(model: &TruncatedFlowModel, h: &[DVector<f64>]) -> Result<()> {
    if h.len() != model.time_steps() {
        return Err(Error::Dimension(format!(
            "{} injection vectors for {} time steps",
            h.len(),
            model.time_steps()
        )));
    }
    if let Some(bad) = h.iter().position(|v| v.len() != 2 * model.n_phases()) {
        return Err(Error::Dimension(format!("injection vector {bad} has the wrong length")));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
