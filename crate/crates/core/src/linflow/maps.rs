use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::TruncatedFlowModel;
use crate::datamatrix::ROWS_PER_STEP;
use crate::error::{Error, Result};
use crate::gridmodel::AreaPartition;

/// Real components of one residual entry: Re v, Im v, |v|.
pub const RESIDUAL_COMPONENTS: usize = 3;

/// Linear maps of the decentralized load-flow model for one area `l`.
///
/// Residual vectors are ordered phase-major: entry `(i, t, c)` for local phase
/// `i`, time step `t` and component `c` lives at `(i·T + t)·3 + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct AreaMap {
    pub phases: Vec<usize>,
    pub neighbors: Vec<usize>,
    /// For k ∈ {l} ∪ N(l) and every time step: the 3n_l × 2n_k block mapping
    /// [P_j, Q_j] of area-k phases to [Re v_i, Im v_i, |v_i|] of area-l phases.
    pub coupling: BTreeMap<usize, Vec<DMatrix<f64>>>,
    /// f_l: stacked (Re w_i, Im w_i, |w_i|).
    pub target: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AreaMaps {
    t_steps: usize,
    partition: AreaPartition,
    areas: Vec<AreaMap>,
}

pub fn build_area_maps(model: &TruncatedFlowModel) -> AreaMaps {
    let part = model.partition().clone();
    let t_steps = model.time_steps();
    let p = model.n_phases();
    let lin = model.linear();
    let mut areas = Vec::with_capacity(part.n_areas());
    for l in 0..part.n_areas() {
        let rows = part.members(l);
        let mut coupling = BTreeMap::new();
        let mut sources = vec![l];
        sources.extend_from_slice(part.neighbors(l));
        for k in sources {
            let cols = part.members(k);
            let blocks = (0..t_steps)
                .map(|t| {
                    let (n, kk) = (lin.n(t), lin.k(t));
                    DMatrix::from_fn(3 * rows.len(), 2 * cols.len(), |r, c| {
                        let (i, comp) = (rows[r / 3], r % 3);
                        let col = cols[c / 2] + if c % 2 == 0 { 0 } else { p };
                        match comp {
                            0 => n[(i, col)].re,
                            1 => n[(i, col)].im,
                            _ => kk[(i, col)],
                        }
                    })
                })
                .collect();
            coupling.insert(k, blocks);
        }
        let mut target = DVector::zeros(3 * t_steps * rows.len());
        for (il, &i) in rows.iter().enumerate() {
            for t in 0..t_steps {
                let w = lin.w(t)[i];
                let base = (il * t_steps + t) * 3;
                target[base] = w.re;
                target[base + 1] = w.im;
                target[base + 2] = w.norm();
            }
        }
        areas.push(AreaMap {
            phases: rows.to_vec(),
            neighbors: part.neighbors(l).to_vec(),
            coupling,
            target,
        });
    }
    AreaMaps {
        t_steps,
        partition: part,
        areas,
    }
}

impl AreaMaps {
    pub fn time_steps(&self) -> usize {
        self.t_steps
    }

    pub fn rows(&self) -> usize {
        ROWS_PER_STEP * self.t_steps
    }

    pub fn n_phases(&self) -> usize {
        self.partition.n_phases()
    }

    pub fn n_areas(&self) -> usize {
        self.areas.len()
    }

    pub fn partition(&self) -> &AreaPartition {
        &self.partition
    }

    pub fn area(&self, l: usize) -> &AreaMap {
        &self.areas[l]
    }

    pub fn residual_len(&self, l: usize) -> usize {
        RESIDUAL_COMPONENTS * self.t_steps * self.areas[l].phases.len()
    }

    pub fn total_residual_len(&self) -> usize {
        (0..self.n_areas()).map(|l| self.residual_len(l)).sum()
    }

    #[inline]
    pub fn index(&self, local_phase: usize, t: usize, comp: usize) -> usize {
        (local_phase * self.t_steps + t) * RESIDUAL_COMPONENTS + comp
    }

    pub fn target(&self, l: usize) -> &DVector<f64> {
        &self.areas[l].target
    }

    /// The 3n_l × 2n_k coupling block of area k's injections into area l.
    pub fn coupling(&self, l: usize, k: usize, t: usize) -> Result<&DMatrix<f64>> {
        self.areas
            .get(l)
            .ok_or(Error::UnknownArea(l))?
            .coupling
            .get(&k)
            .map(|blocks| &blocks[t])
            .ok_or(Error::UnknownArea(k))
    }

    fn check_local(&self, k: usize, x: &DMatrix<f64>) -> Result<()> {
        let want = (self.rows(), self.areas[k].phases.len());
        if x.shape() != want {
            return Err(Error::Dimension(format!(
                "area {k} block is {}x{}, expected {}x{}",
                x.nrows(),
                x.ncols(),
                want.0,
                want.1
            )));
        }
        Ok(())
    }

    /// [P_j, Q_j] of the columns of `x` at time step t, interleaved.
    fn injections(x: &DMatrix<f64>, t: usize) -> DVector<f64> {
        let base = ROWS_PER_STEP * t;
        DVector::from_fn(2 * x.ncols(), |c, _| x[(base + 3 + c % 2, c / 2)])
    }

    /// E_lk(X_k) = −T_k restricted to area l, for a neighbor k ≠ l; `x_k` holds
    /// the columns of area k only.
    pub fn cross_map(&self, l: usize, k: usize, x_k: &DMatrix<f64>) -> Result<DVector<f64>> {
        if k == l || !self.areas.get(l).ok_or(Error::UnknownArea(l))?.coupling.contains_key(&k) {
            return Err(Error::UnknownArea(k));
        }
        self.check_local(k, x_k)?;
        let mut out = DVector::zeros(self.residual_len(l));
        for t in 0..self.t_steps {
            let r = &self.areas[l].coupling[&k][t] * Self::injections(x_k, t);
            self.scatter(&mut out, t, &r, -1.0);
        }
        Ok(out)
    }

    /// E_ll(X_l) = y_l − T_l restricted to area l.
    pub fn self_map(&self, l: usize, x_l: &DMatrix<f64>) -> Result<DVector<f64>> {
        if l >= self.n_areas() {
            return Err(Error::UnknownArea(l));
        }
        self.check_local(l, x_l)?;
        let mut out = DVector::zeros(self.residual_len(l));
        for t in 0..self.t_steps {
            let r = &self.areas[l].coupling[&l][t] * Self::injections(x_l, t);
            self.scatter(&mut out, t, &r, -1.0);
            for il in 0..x_l.ncols() {
                for c in 0..RESIDUAL_COMPONENTS {
                    out[self.index(il, t, c)] += x_l[(ROWS_PER_STEP * t + c, il)];
                }
            }
        }
        Ok(out)
    }

    /// Accumulate `scale · r` (ordered local-phase-major, 3 per phase) for one
    /// time step into a residual vector.
    fn scatter(&self, out: &mut DVector<f64>, t: usize, r: &DVector<f64>, scale: f64) {
        for il in 0..r.len() / 3 {
            for c in 0..3 {
                out[self.index(il, t, c)] += scale * r[3 * il + c];
            }
        }
    }

    fn gather(&self, z: &DVector<f64>, t: usize, n_local: usize) -> DVector<f64> {
        DVector::from_fn(3 * n_local, |r, _| z[self.index(r / 3, t, r % 3)])
    }

    /// Columns of area `k` taken from a full m×n matrix.
    pub fn local_block(&self, k: usize, x: &DMatrix<f64>) -> DMatrix<f64> {
        let cols = &self.areas[k].phases;
        DMatrix::from_fn(x.nrows(), cols.len(), |r, c| x[(r, cols[c])])
    }

    /// E_ll(X) + Σ_k E_lk(X) − f_l for a full m×n matrix X.
    pub fn residual(&self, l: usize, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.residual_from(l, |k| self.local_block(k, x))
    }

    /// Same as [`residual`](Self::residual) with area blocks supplied by a
    /// closure (used with per-area factor products).
    pub fn residual_from(&self, l: usize, mut block: impl FnMut(usize) -> DMatrix<f64>) -> Result<DVector<f64>> {
        let mut r = self.self_map(l, &block(l))?;
        for &k in &self.areas[l].neighbors {
            r += self.cross_map(l, k, &block(k))?;
        }
        Ok(r - &self.areas[l].target)
    }

    /// Add E_ll*(z) into `out_l` (the columns of area l).
    pub fn self_adjoint_add(&self, l: usize, z: &DVector<f64>, out_l: &mut DMatrix<f64>) {
        let n_l = self.areas[l].phases.len();
        for t in 0..self.t_steps {
            let zt = self.gather(z, t, n_l);
            for il in 0..n_l {
                for c in 0..RESIDUAL_COMPONENTS {
                    out_l[(ROWS_PER_STEP * t + c, il)] += zt[3 * il + c];
                }
            }
            let back = self.areas[l].coupling[&l][t].tr_mul(&zt);
            Self::scatter_injections(out_l, t, &back, -1.0);
        }
    }

    /// Add E_lk*(z) into `out_k` (the columns of area k).
    pub fn cross_adjoint_add(&self, l: usize, k: usize, z: &DVector<f64>, out_k: &mut DMatrix<f64>) {
        let n_l = self.areas[l].phases.len();
        for t in 0..self.t_steps {
            let zt = self.gather(z, t, n_l);
            let back = self.areas[l].coupling[&k][t].tr_mul(&zt);
            Self::scatter_injections(out_k, t, &back, -1.0);
        }
    }

    fn scatter_injections(out: &mut DMatrix<f64>, t: usize, back: &DVector<f64>, scale: f64) {
        let base = ROWS_PER_STEP * t;
        for c in 0..back.len() {
            out[(base + 3 + c % 2, c / 2)] += scale * back[c];
        }
    }

    /// Adjoint of X ↦ E_ll(X) + Σ_k E_lk(X) applied to `z`, as a full m×n
    /// matrix.
    pub fn residual_adjoint(&self, l: usize, z: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows(), self.n_phases());
        let mut scatter_cols = |k: usize, block: &DMatrix<f64>| {
            for (c, &j) in self.areas[k].phases.iter().enumerate() {
                for r in 0..block.nrows() {
                    out[(r, j)] += block[(r, c)];
                }
            }
        };
        let mut own = DMatrix::zeros(self.rows(), self.areas[l].phases.len());
        self.self_adjoint_add(l, z, &mut own);
        scatter_cols(l, &own);
        for &k in &self.areas[l].neighbors {
            let mut blk = DMatrix::zeros(self.rows(), self.areas[k].phases.len());
            self.cross_adjoint_add(l, k, z, &mut blk);
            scatter_cols(k, &blk);
        }
        out
    }

    /// Residual entries (i, t, c) of area l regrouped per time step as
    /// 3n_l-vectors.
    pub fn split_by_step(&self, l: usize, z: &DVector<f64>) -> Vec<DVector<f64>> {
        let n_l = self.areas[l].phases.len();
        (0..self.t_steps).map(|t| self.gather(z, t, n_l)).collect()
    }
}
