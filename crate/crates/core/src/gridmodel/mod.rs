//! Network data model: admittance blocks, bus-phase indexing, area partitions,
//! file ingestion, a synthetic radial feeder generator and the exact
//! fixed-point power flow used as ground truth.

mod feeder;
mod flow;
mod manifest;
pub mod mtx;
mod partition;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use feeder::{generate_radial_feeder, Feeder, FeederSpec};
pub use flow::{flow_residual, solve_exact_flow, solve_exact_flow_with, DEFAULT_FLOW_MAX_ITERS};
pub use manifest::{load_network, write_network, Manifest};
pub use partition::AreaPartition;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn parse(s: &str) -> Option<Phase> {
        match s.trim() {
            "a" | "A" => Some(Phase::A),
            "b" | "B" => Some(Phase::B),
            "c" | "C" => Some(Phase::C),
            _ => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::A => "a",
            Phase::B => "b",
            Phase::C => "c",
        })
    }
}

/// Ordered list of the non-slack bus-phases; position in the list is the
/// column index used by every matrix in the crate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhaseIndex {
    entries: Vec<(String, Phase)>,
    slack_phases: usize,
}

impl PhaseIndex {
    pub fn new(entries: Vec<(String, Phase)>, slack_phases: usize) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Dimension("phase index is empty".into()));
        }
        if slack_phases != 1 && slack_phases != 3 {
            return Err(Error::Dimension(format!(
                "slack bus must have 1 or 3 phases, got {slack_phases}"
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for (bus, ph) in &entries {
            if !seen.insert((bus.as_str(), *ph)) {
                return Err(Error::Dimension(format!("duplicate phase {bus}.{ph}")));
            }
        }
        Ok(Self {
            entries,
            slack_phases,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Phase)] {
        &self.entries
    }

    pub fn slack_phases(&self) -> usize {
        self.slack_phases
    }

    pub fn bus(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn position(&self, bus: &str, phase: Phase) -> Option<usize> {
        self.entries
            .iter()
            .position(|(b, p)| b == bus && *p == phase)
    }
}

/// Admittance model of the network with the slack bus eliminated.
#[derive(Clone, Debug)]
pub struct NetworkModel {
    y_ll: CMatrix,
    y_l0: CMatrix,
    v0: CVector,
    index: PhaseIndex,
    z_ll: CMatrix,
    w: CVector,
}

impl NetworkModel {
    pub fn new(y_ll: CMatrix, y_l0: CMatrix, v0: CVector, index: PhaseIndex) -> Result<Self> {
        let p = index.len();
        if y_ll.shape() != (p, p) {
            return Err(Error::Dimension(format!(
                "Y_LL is {}x{}, expected {p}x{p}",
                y_ll.nrows(),
                y_ll.ncols()
            )));
        }
        let ns = index.slack_phases();
        if y_l0.shape() != (p, ns) {
            return Err(Error::Dimension(format!(
                "Y_L0 is {}x{}, expected {p}x{ns}",
                y_l0.nrows(),
                y_l0.ncols()
            )));
        }
        if v0.len() != ns {
            return Err(Error::Dimension(format!(
                "v0 has {} entries, expected {ns}",
                v0.len()
            )));
        }
        let z_ll = invert_admittance(&y_ll)?;
        let w = -(&z_ll * (&y_l0 * &v0));
        Ok(Self {
            y_ll,
            y_l0,
            v0,
            index,
            z_ll,
            w,
        })
    }

    pub fn n_phases(&self) -> usize {
        self.index.len()
    }

    pub fn y_ll(&self) -> &CMatrix {
        &self.y_ll
    }

    pub fn y_l0(&self) -> &CMatrix {
        &self.y_l0
    }

    pub fn v0(&self) -> &CVector {
        &self.v0
    }

    pub fn index(&self) -> &PhaseIndex {
        &self.index
    }

    /// Y_LL⁻¹.
    pub fn z_ll(&self) -> &CMatrix {
        &self.z_ll
    }

    /// No-load voltage w = −Y_LL⁻¹·Y_L0·v0.
    pub fn no_load_voltage(&self) -> &CVector {
        &self.w
    }
}

fn invert_admittance(y: &CMatrix) -> Result<CMatrix> {
    let scale = y.iter().map(|z| z.norm()).fold(0.0_f64, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::SingularAdmittance);
    }
    let lu = y.clone().lu();
    let u = lu.u();
    let min_pivot = u
        .diagonal()
        .iter()
        .map(|z| z.norm())
        .fold(f64::INFINITY, f64::min);
    if min_pivot <= scale * 1e-13 {
        return Err(Error::SingularAdmittance);
    }
    let inv = lu.try_inverse().ok_or(Error::SingularAdmittance)?;
    if inv.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::SingularAdmittance);
    }
    Ok(inv)
}

/// Complex power injections, one row per time step (per-unit, load < 0).
#[derive(Clone, Debug, PartialEq)]
pub struct LoadScenario {
    s: CMatrix,
}

impl LoadScenario {
    pub fn new(s: CMatrix) -> Result<Self> {
        if s.nrows() == 0 || s.ncols() == 0 {
            return Err(Error::Dimension("load scenario must be non-empty".into()));
        }
        Ok(Self { s })
    }

    pub fn time_steps(&self) -> usize {
        self.s.nrows()
    }

    pub fn n_phases(&self) -> usize {
        self.s.ncols()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.s
    }

    pub fn at(&self, t: usize) -> CVector {
        self.s.row(t).transpose()
    }

    /// First `t` time steps.
    pub fn truncated(&self, t: usize) -> Result<Self> {
        if t == 0 || t > self.time_steps() {
            return Err(Error::InvalidArgument(format!(
                "cannot take {t} of {} time steps",
                self.time_steps()
            )));
        }
        Ok(Self {
            s: self.s.rows(0, t).into_owned(),
        })
    }
}

/// Solve the exact flow at every time step of a scenario; row t of the result
/// holds the voltages at time t.
pub fn solve_scenario(net: &NetworkModel, loads: &LoadScenario) -> Result<CMatrix> {
    if loads.n_phases() != net.n_phases() {
        return Err(Error::Dimension(format!(
            "loads have {} phases, network has {}",
            loads.n_phases(),
            net.n_phases()
        )));
    }
    let mut v = CMatrix::zeros(loads.time_steps(), net.n_phases());
    for t in 0..loads.time_steps() {
        let vt = solve_exact_flow(net, &loads.at(t))?;
        v.set_row(t, &vt.transpose());
    }
    Ok(v)
}
