use nalgebra::DVector;
use num_complex::Complex64;

use super::{area_flow_terms, check_injections, TruncatedFlowModel, RESIDUAL_COMPONENTS};
use crate::error::Result;
use crate::gridmodel::CVector;
use crate::simnet::{CommLedger, MessageBus, Outgoing, Schedule, Tag};

/// Voltage prediction held by one area after the exchange.
#[derive(Clone, Debug, PartialEq)]
pub struct AreaFlowEstimate {
    pub phases: Vec<usize>,
    time_steps: usize,
    /// (Re v, Im v, |v|) at `(local_phase·T + t)·3 + component`.
    pub y: DVector<f64>,
}

impl AreaFlowEstimate {
    pub fn voltage(&self, local: usize, t: usize) -> Complex64 {
        let k = (local * self.time_steps + t) * RESIDUAL_COMPONENTS;
        Complex64::new(self.y[k], self.y[k + 1])
    }

    pub fn magnitude(&self, local: usize, t: usize) -> f64 {
        self.y[(local * self.time_steps + t) * RESIDUAL_COMPONENTS + 2]
    }
}

#[derive(Clone, Debug)]
pub struct DecentralizedFlow {
    pub areas: Vec<AreaFlowEstimate>,
    pub ledger: CommLedger,
}

impl DecentralizedFlow {
    /// Per time step: phasor and magnitude predictions over all phases.
    pub fn assemble(&self, n_phases: usize) -> (Vec<CVector>, Vec<DVector<f64>>) {
        let t_steps = self.areas.first().map_or(0, |a| a.time_steps);
        let mut v = vec![CVector::zeros(n_phases); t_steps];
        let mut mag = vec![DVector::zeros(n_phases); t_steps];
        for area in &self.areas {
            for (il, &i) in area.phases.iter().enumerate() {
                for t in 0..t_steps {
                    v[t][i] = area.voltage(il, t);
                    mag[t][i] = area.magnitude(il, t);
                }
            }
        }
        (v, mag)
    }
}

struct Node {
    y: DVector<f64>,
}

/// Evaluate the truncated model by exchanging flow terms between neighboring
/// areas: every area computes the contribution of its own injections to its
/// own phases and to its neighbors' phases, sends the latter, and sums what it
/// receives with the no-load voltage.
pub fn decentralized_flow(model: &TruncatedFlowModel, h: &[DVector<f64>], schedule: Schedule) -> Result<DecentralizedFlow> {
    check_injections(model, h)?;
    let part = model.partition();
    let t_steps = model.time_steps();
    let n_areas = part.n_areas();
    let stride = RESIDUAL_COMPONENTS * t_steps;
    let mut bus = MessageBus::new(n_areas, part.adjacency().iter().copied(), schedule)?;

    let mut nodes: Vec<Node> = (0..n_areas)
        .map(|l| {
            let members = part.members(l);
            let mut y = DVector::zeros(stride * members.len());
            for (il, &i) in members.iter().enumerate() {
                for t in 0..t_steps {
                    let w = model.linear().w(t)[i];
                    let k = il * stride + 3 * t;
                    y[k] = w.re;
                    y[k + 1] = w.im;
                    y[k + 2] = w.norm();
                }
            }
            Node { y }
        })
        .collect();

    bus.run_round(0, &mut nodes, |k, node, _| {
        let terms = area_flow_terms(model, h, k)?;
        for (il, i) in part.members(k).iter().enumerate() {
            let mut seg = node.y.rows_mut(il * stride, stride);
            seg += &terms[i];
        }
        let mut out = Vec::new();
        for &l in part.neighbors(k) {
            let payload: Vec<f64> = part
                .members(l)
                .iter()
                .flat_map(|i| terms[i].iter().copied())
                .collect();
            out.push(Outgoing::new(l, Tag::FlowTerm, payload));
        }
        Ok(out)
    })?;
    bus.run_round(0, &mut nodes, |_, node, inbox| {
        for msg in inbox {
            for (y, x) in node.y.iter_mut().zip(&msg.payload) {
                *y += x;
            }
        }
        Ok(Vec::new())
    })?;

    let areas = nodes
        .into_iter()
        .enumerate()
        .map(|(l, n)| AreaFlowEstimate {
            phases: part.members(l).to_vec(),
            time_steps: t_steps,
            y: n.y,
        })
        .collect();
    Ok(DecentralizedFlow {
        areas,
        ledger: bus.into_ledger(),
    })
}
