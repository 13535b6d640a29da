use num_complex::Complex64;

use super::{CVector, NetworkModel};
use crate::error::{Error, Result};

pub const DEFAULT_FLOW_MAX_ITERS: usize = 100;

const FLOW_TOL: f64 = 1e-10;

fn fixed_point_map(net: &NetworkModel, s: &CVector, v: &CVector) -> CVector {
    let current = CVector::from_iterator(
        v.len(),
        s.iter().zip(v.iter()).map(|(si, vi)| si.conj() / vi.conj()),
    );
    net.no_load_voltage() + net.z_ll() * current
}

/// ∞-norm of v − (w + Y_LL⁻¹·diag(conj v)⁻¹·conj s).
pub fn flow_residual(net: &NetworkModel, s: &CVector, v: &CVector) -> f64 {
    let next = fixed_point_map(net, s, v);
    (next - v).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Z-bus fixed-point load flow, started from the no-load voltage.
pub fn solve_exact_flow(net: &NetworkModel, s: &CVector) -> Result<CVector> {
    solve_exact_flow_with(net, s, DEFAULT_FLOW_MAX_ITERS)
}

pub fn solve_exact_flow_with(net: &NetworkModel, s: &CVector, max_iters: usize) -> Result<CVector> {
    if s.len() != net.n_phases() {
        return Err(Error::Dimension(format!(
            "injection vector has {} entries, network has {} phases",
            s.len(),
            net.n_phases()
        )));
    }
    let mut v = net.no_load_voltage().clone();
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let next = fixed_point_map(net, s, &v);
        // residual of the current iterate is the length of the step it takes
        residual = (&next - &v).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if !residual.is_finite() || next.iter().any(|z| !finite(z)) {
            break;
        }
        if residual <= FLOW_TOL {
            return Ok(v);
        }
        v = next;
    }
    Err(Error::DivergedFlow {
        iterations: max_iters,
        residual,
    })
}

fn finite(z: &Complex64) -> bool {
    z.re.is_finite() && z.im.is_finite()
}
