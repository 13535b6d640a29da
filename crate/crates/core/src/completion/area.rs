use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{AdmmConfig, Problem};
use crate::datamatrix::ROWS_PER_STEP;
use crate::error::{Error, Result};
use crate::linflow::RESIDUAL_COMPONENTS;
use crate::simnet::{Message, Outgoing, Tag};

const C: usize = RESIDUAL_COMPONENTS;

/// ADMM variables owned by one area. Residual-shaped vectors use the area's
/// residual layout (see [`crate::linflow::AreaMaps`]).
#[derive(Clone, Debug, PartialEq)]
pub struct AreaState {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub s: BTreeMap<usize, DMatrix<f64>>,
    pub gamma: BTreeMap<usize, DMatrix<f64>>,
    /// q_lj, standing in for E_lj(X_j).
    pub q: BTreeMap<usize, DVector<f64>>,
    pub lambda: BTreeMap<usize, DVector<f64>>,
    /// q_jl as last received from neighbor j.
    pub q_in: BTreeMap<usize, DVector<f64>>,
    /// Local copy of the neighbor's multiplier Λ_jl.
    pub lambda_in: BTreeMap<usize, DVector<f64>>,
    /// E_jl(X_l) as last sent to neighbor j.
    pub e_out: BTreeMap<usize, DVector<f64>>,
    /// E_lj(X_j) as last received from neighbor j.
    pub e_in: BTreeMap<usize, DVector<f64>>,
    /// U_j as last received from neighbor j.
    pub u_in: BTreeMap<usize, DMatrix<f64>>,
}

/// S_lj = ½(U_l + U_j).
pub fn update_s(u_l: &DMatrix<f64>, u_j: &DMatrix<f64>) -> DMatrix<f64> {
    (u_l + u_j) * 0.5
}

/// Jointly minimize ν/2‖e_ll + Σ_j q_j − f‖² + Σ_j λ/2‖q_j − e_j + Λ_j‖²
/// over all q_j, using (λI + νJ)⁻¹ = (I − ν/(λ + ν·deg)·J)/λ.
pub fn update_q(
    e_ll: &DVector<f64>,
    f: &DVector<f64>,
    e: &BTreeMap<usize, DVector<f64>>,
    lambda_dual: &BTreeMap<usize, DVector<f64>>,
    nu: f64,
    lambda: f64,
) -> Result<BTreeMap<usize, DVector<f64>>> {
    if !(lambda > 0.0) {
        return Err(Error::UnsupportedConfig(format!(
            "the q update needs lambda > 0, got {lambda}"
        )));
    }
    let deg = e.len() as f64;
    let base = (f - e_ll) * nu;
    let mut a = BTreeMap::new();
    let mut sum = DVector::zeros(f.len());
    for (&j, e_j) in e {
        let dual = lambda_dual
            .get(&j)
            .ok_or_else(|| Error::Dimension(format!("missing multiplier for neighbor {j}")))?;
        let a_j = (e_j - dual) * lambda + &base;
        sum += &a_j;
        a.insert(j, a_j);
    }
    let total = sum / (lambda + nu * deg);
    Ok(a
        .into_iter()
        .map(|(j, a_j)| (j, (a_j - &total * nu) / lambda))
        .collect())
}

/// Per-step linear operators of the area's load-flow terms acting on
/// x_t[j·5 + a] = X_l[5t + a, j].
#[derive(Clone, Debug)]
struct FlowOps {
    /// E_ll at step t: 3n_l × 5n_l.
    own: Vec<DMatrix<f64>>,
    /// E_jl at step t for each neighbor j: 3n_j × 5n_l.
    cross: BTreeMap<usize, Vec<DMatrix<f64>>>,
    /// ν·ownᵀown + λ·Σ crossᵀcross.
    gram: Vec<DMatrix<f64>>,
    target: DVector<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct AreaWorker {
    pub id: usize,
    pub phases: Vec<usize>,
    pub neighbors: Vec<usize>,
    n_areas: usize,
    t_steps: usize,
    data: DMatrix<f64>,
    observed: DMatrix<f64>,
    flow: Option<FlowOps>,
    cfg: AdmmConfig,
    pub state: AreaState,
    pub last_ms: f64,
}

fn apply_to_injections(block: &DMatrix<f64>, sign: f64, rows: usize, n_l: usize) -> DMatrix<f64> {
    // block maps [P_j, Q_j] (2 per phase) to 3 entries per receiving phase;
    // widen it to act on the 5 rows of every local column
    let mut op = DMatrix::zeros(rows, ROWS_PER_STEP * n_l);
    for j in 0..n_l {
        for p in 0..2 {
            for r in 0..rows {
                op[(r, j * ROWS_PER_STEP + 3 + p)] = sign * block[(r, 2 * j + p)];
            }
        }
    }
    op
}

impl AreaWorker {
    pub fn new(problem: &Problem<'_>, cfg: &AdmmConfig, id: usize, u0: DMatrix<f64>, v0: DMatrix<f64>) -> Result<Self> {
        let part = problem.partition;
        let phases = part.members(id).to_vec();
        let neighbors = part.neighbors(id).to_vec();
        let n_l = phases.len();
        let m = problem.data.nrows();
        let data = DMatrix::from_fn(m, n_l, |r, c| problem.data[(r, phases[c])]);
        let observed = DMatrix::from_fn(m, n_l, |r, c| f64::from(u8::from(problem.mask.contains(r, phases[c]))));
        let data = data.component_mul(&observed);

        let (flow, t_steps) = match problem.maps {
            None => (None, m / ROWS_PER_STEP),
            Some(maps) => {
                let t_steps = maps.time_steps();
                let mut own = Vec::with_capacity(t_steps);
                let mut cross: BTreeMap<usize, Vec<DMatrix<f64>>> = BTreeMap::new();
                let mut gram = Vec::with_capacity(t_steps);
                for t in 0..t_steps {
                    let mut a = apply_to_injections(maps.coupling(id, id, t)?, -1.0, C * n_l, n_l);
                    for i in 0..n_l {
                        for c in 0..C {
                            a[(i * C + c, i * ROWS_PER_STEP + c)] += 1.0;
                        }
                    }
                    let mut g = a.tr_mul(&a) * cfg.nu;
                    for &j in &neighbors {
                        let n_j = part.members(j).len();
                        let b = apply_to_injections(maps.coupling(j, id, t)?, -1.0, C * n_j, n_l);
                        g += b.tr_mul(&b) * cfg.lambda;
                        cross.entry(j).or_default().push(b);
                    }
                    own.push(a);
                    gram.push(g);
                }
                let flow = FlowOps {
                    own,
                    cross,
                    gram,
                    target: maps.target(id).clone(),
                };
                (Some(flow), t_steps)
            }
        };

        let state = AreaState {
            s: neighbors.iter().map(|&j| (j, u0.clone())).collect(),
            gamma: neighbors.iter().map(|&j| (j, DMatrix::zeros(u0.nrows(), u0.ncols()))).collect(),
            u: u0,
            v: v0,
            q: BTreeMap::new(),
            lambda: BTreeMap::new(),
            q_in: BTreeMap::new(),
            lambda_in: BTreeMap::new(),
            e_out: BTreeMap::new(),
            e_in: BTreeMap::new(),
            u_in: BTreeMap::new(),
        };
        let mut w = Self {
            id,
            phases,
            neighbors,
            n_areas: part.n_areas(),
            t_steps,
            data,
            observed,
            flow,
            cfg: cfg.clone(),
            state,
            last_ms: 0.0,
        };
        if w.flow.is_some() {
            let x = w.product();
            let e_out = w.cross_terms(&x);
            let zeros_own = DVector::zeros(C * t_steps * w.phases.len());
            for &j in &w.neighbors.clone() {
                w.state.lambda.insert(j, zeros_own.clone());
                w.state.lambda_in.insert(j, DVector::zeros(e_out[&j].len()));
            }
            w.state.q_in = e_out.clone();
            w.state.e_out = e_out;
        }
        Ok(w)
    }

    pub fn has_flow(&self) -> bool {
        self.flow.is_some()
    }

    pub fn n_local(&self) -> usize {
        self.phases.len()
    }

    pub fn product(&self) -> DMatrix<f64> {
        &self.state.u * &self.state.v
    }

    /// x_t with x_t[j·5 + a] = X[5t + a, j].
    fn step_vector(x: &DMatrix<f64>, t: usize) -> DVector<f64> {
        let n_l = x.ncols();
        DVector::from_fn(ROWS_PER_STEP * n_l, |k, _| x[(ROWS_PER_STEP * t + k % ROWS_PER_STEP, k / ROWS_PER_STEP)])
    }

    /// Scatter a per-step 3n-vector into residual layout.
    fn scatter(&self, out: &mut DVector<f64>, t: usize, n: usize, r: &DVector<f64>) {
        for i in 0..n {
            for c in 0..C {
                out[(i * self.t_steps + t) * C + c] = r[i * C + c];
            }
        }
    }

    fn gather(&self, z: &DVector<f64>, t: usize, n: usize) -> DVector<f64> {
        DVector::from_fn(C * n, |k, _| z[((k / C) * self.t_steps + t) * C + k % C])
    }

    /// E_ll(X_l) in residual layout.
    pub fn own_term(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let flow = self.flow.as_ref().expect("load-flow terms present");
        let n_l = self.n_local();
        let mut out = DVector::zeros(C * self.t_steps * n_l);
        for t in 0..self.t_steps {
            let r = &flow.own[t] * Self::step_vector(x, t);
            self.scatter(&mut out, t, n_l, &r);
        }
        out
    }

    /// E_jl(X_l) for every neighbor j.
    pub fn cross_terms(&self, x: &DMatrix<f64>) -> BTreeMap<usize, DVector<f64>> {
        let flow = self.flow.as_ref().expect("load-flow terms present");
        let xs: Vec<DVector<f64>> = (0..self.t_steps).map(|t| Self::step_vector(x, t)).collect();
        flow.cross
            .iter()
            .map(|(&j, ops)| {
                let n_j = ops[0].nrows() / C;
                let mut out = DVector::zeros(C * self.t_steps * n_j);
                for t in 0..self.t_steps {
                    let r = &ops[t] * &xs[t];
                    self.scatter(&mut out, t, n_j, &r);
                }
                (j, out)
            })
            .collect()
    }

    /// Linear part ℓ_t of the load-flow terms for the U and V updates.
    fn flow_rhs(&self, t: usize) -> DVector<f64> {
        let flow = self.flow.as_ref().expect("load-flow terms present");
        let st = &self.state;
        let n_l = self.n_local();
        let mut goal = flow.target.clone();
        for q in st.q.values() {
            goal -= q;
        }
        let mut rhs = flow.own[t].tr_mul(&self.gather(&goal, t, n_l)) * self.cfg.nu;
        for (j, ops) in &flow.cross {
            let n_j = ops[t].nrows() / C;
            let shifted = &st.q_in[j] + &st.lambda_in[j];
            rhs += ops[t].tr_mul(&self.gather(&shifted, t, n_j)) * self.cfg.lambda;
        }
        rhs
    }

    fn solve(h: DMatrix<f64>, rhs: DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
        let chol = h.cholesky().ok_or(Error::SingularNormalMatrix(what))?;
        Ok(chol.solve(&rhs))
    }

    /// Exact minimizer of the Lagrangian in U_l plus (c/2)‖U_l − U_l^k‖².
    pub fn update_u(&mut self) -> Result<()> {
        let cfg = &self.cfg;
        let st = &self.state;
        let (m, r) = st.u.shape();
        let n_l = self.n_local();
        let v = &st.v;
        let deg = self.neighbors.len() as f64;
        let diag = 1.0 / self.n_areas as f64 + cfg.prox_c + cfg.gamma * deg;
        let mut consensus = DMatrix::zeros(m, r);
        for j in &self.neighbors {
            consensus += &st.s[j] - &st.gamma[j];
        }
        let mut u_new = DMatrix::zeros(m, r);
        let blocks = m.div_ceil(ROWS_PER_STEP);
        for t in 0..blocks {
            let row0 = ROWS_PER_STEP * t;
            let rows = ROWS_PER_STEP.min(m - row0);
            let dim = rows * r;
            // unknown u[a·r + k] = U[row0 + a, k]
            let mut h = DMatrix::identity(dim, dim) * diag;
            let mut rhs = DVector::zeros(dim);
            for a in 0..rows {
                let row = row0 + a;
                for k in 0..r {
                    rhs[a * r + k] = cfg.prox_c * st.u[(row, k)] + cfg.gamma * consensus[(row, k)];
                }
                for j in 0..n_l {
                    if self.observed[(row, j)] != 0.0 {
                        for k in 0..r {
                            rhs[a * r + k] += cfg.mu * self.data[(row, j)] * v[(k, j)];
                            for k2 in 0..r {
                                h[(a * r + k, a * r + k2)] += cfg.mu * v[(k, j)] * v[(k2, j)];
                            }
                        }
                    }
                }
            }
            if let (Some(flow), true) = (&self.flow, rows == ROWS_PER_STEP) {
                // x_t = P u with P[(j·5 + a), (a·r + k)] = V[k, j]
                let p = DMatrix::from_fn(ROWS_PER_STEP * n_l, dim, |row, col| {
                    let (j, a) = (row / ROWS_PER_STEP, row % ROWS_PER_STEP);
                    if col / r == a {
                        v[(col % r, j)]
                    } else {
                        0.0
                    }
                });
                let gp = &flow.gram[t] * &p;
                h += p.tr_mul(&gp);
                rhs += p.tr_mul(&self.flow_rhs(t));
            }
            let sol = Self::solve(h, rhs, "U")?;
            for a in 0..rows {
                for k in 0..r {
                    u_new[(row0 + a, k)] = sol[a * r + k];
                }
            }
        }
        self.state.u = u_new;
        Ok(())
    }

    /// Exact minimizer of the Lagrangian in V_l plus (c/2)‖V_l − V_l^k‖².
    pub fn update_v(&mut self) -> Result<()> {
        let cfg = &self.cfg;
        let st = &self.state;
        let (m, r) = st.u.shape();
        let n_l = self.n_local();
        let u = &st.u;
        let dim = r * n_l;
        // unknown v[j·r + k] = V[k, j]
        let mut h = DMatrix::identity(dim, dim) * (1.0 + cfg.prox_c);
        let mut rhs = DVector::zeros(dim);
        for j in 0..n_l {
            for k in 0..r {
                rhs[j * r + k] = cfg.prox_c * st.v[(k, j)];
            }
            for row in 0..m {
                if self.observed[(row, j)] != 0.0 {
                    for k in 0..r {
                        rhs[j * r + k] += cfg.mu * self.data[(row, j)] * u[(row, k)];
                        for k2 in 0..r {
                            h[(j * r + k, j * r + k2)] += cfg.mu * u[(row, k)] * u[(row, k2)];
                        }
                    }
                }
            }
        }
        if let Some(flow) = &self.flow {
            for t in 0..self.t_steps {
                let ut = u.rows(ROWS_PER_STEP * t, ROWS_PER_STEP);
                // G = Q_t·W_t with W_t = blockdiag(U_t)
                let q = &flow.gram[t];
                let mut g = DMatrix::zeros(ROWS_PER_STEP * n_l, dim);
                for j2 in 0..n_l {
                    let blk = q.columns(ROWS_PER_STEP * j2, ROWS_PER_STEP) * ut;
                    g.columns_mut(j2 * r, r).copy_from(&blk);
                }
                for j in 0..n_l {
                    let blk = ut.tr_mul(&g.rows(ROWS_PER_STEP * j, ROWS_PER_STEP));
                    let mut target = h.rows_mut(j * r, r);
                    target += blk;
                }
                let l_t = self.flow_rhs(t);
                for j in 0..n_l {
                    let contrib = ut.tr_mul(&l_t.rows(ROWS_PER_STEP * j, ROWS_PER_STEP));
                    let mut seg = rhs.rows_mut(j * r, r);
                    seg += contrib;
                }
            }
        }
        let sol = Self::solve(h, rhs, "V")?;
        self.state.v = DMatrix::from_fn(r, n_l, |k, j| sol[j * r + k]);
        Ok(())
    }

    /// The part of the scaled augmented Lagrangian that depends on (U_l, V_l).
    pub fn local_lagrangian(&self, u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
        let cfg = &self.cfg;
        let st = &self.state;
        let x = u * v;
        let mut val = 0.5 * (u.norm_squared() / self.n_areas as f64 + v.norm_squared());
        val += 0.5 * cfg.mu * (x.component_mul(&self.observed) - &self.data).norm_squared();
        for j in &self.neighbors {
            val += 0.5 * cfg.gamma * (u - &st.s[j] + &st.gamma[j]).norm_squared();
        }
        if let Some(flow) = &self.flow {
            let mut own = self.own_term(&x) - &flow.target;
            for q in st.q.values() {
                own += q;
            }
            val += 0.5 * cfg.nu * own.norm_squared();
            for (j, e) in self.cross_terms(&x) {
                val += 0.5 * cfg.lambda * (&st.q_in[&j] - e + &st.lambda_in[&j]).norm_squared();
            }
        }
        val
    }

    /// First communication round: absorb q_jl, update U_l and V_l, send U_l
    /// and E_jl(X_l) to every neighbor.
    pub fn round_a(&mut self, inbox: &[Message]) -> Result<Vec<Outgoing>> {
        let start = std::time::Instant::now();
        for msg in inbox {
            if msg.tag == Tag::QTerm {
                let q = DVector::from_vec(msg.payload.clone());
                let mirror = self.state.lambda_in.get_mut(&msg.from).expect("neighbor multiplier");
                *mirror += &q - &self.state.e_out[&msg.from];
                self.state.q_in.insert(msg.from, q);
            }
        }
        self.update_u()?;
        self.update_v()?;
        let mut out = Vec::new();
        if self.flow.is_some() {
            self.state.e_out = self.cross_terms(&self.product());
        }
        for &j in &self.neighbors {
            out.push(Outgoing::new(j, Tag::Factor, self.state.u.as_slice().to_vec()));
            if let Some(e) = self.state.e_out.get(&j) {
                out.push(Outgoing::new(j, Tag::FlowTerm, e.as_slice().to_vec()));
            }
        }
        self.last_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(out)
    }

    /// Second round: q update, consensus averages and multiplier steps; send
    /// q_lj to every neighbor.
    pub fn round_b(&mut self, inbox: &[Message]) -> Result<Vec<Outgoing>> {
        let start = std::time::Instant::now();
        let (m, r) = self.state.u.shape();
        for msg in inbox {
            match msg.tag {
                Tag::Factor => {
                    self.state
                        .u_in
                        .insert(msg.from, DMatrix::from_column_slice(m, r, &msg.payload));
                }
                Tag::FlowTerm => {
                    self.state.e_in.insert(msg.from, DVector::from_vec(msg.payload.clone()));
                }
                Tag::QTerm => return Err(Error::Protocol { from: msg.from, to: self.id }),
            }
        }
        let mut out = Vec::new();
        if let Some(flow) = &self.flow {
            if !self.neighbors.is_empty() {
                let e_ll = self.own_term(&self.product());
                let q = update_q(&e_ll, &flow.target, &self.state.e_in, &self.state.lambda, self.cfg.nu, self.cfg.lambda)?;
                for (j, q_j) in &q {
                    let dual = self.state.lambda.get_mut(j).expect("own multiplier");
                    *dual += q_j - &self.state.e_in[j];
                    out.push(Outgoing::new(*j, Tag::QTerm, q_j.as_slice().to_vec()));
                }
                self.state.q = q;
            }
        }
        for &j in &self.neighbors {
            let s = update_s(&self.state.u, &self.state.u_in[&j]);
            let g = self.state.gamma.get_mut(&j).expect("consensus multiplier");
            *g += &self.state.u - &s;
            self.state.s.insert(j, s);
        }
        self.last_ms += start.elapsed().as_secs_f64() * 1e3;
        Ok(out)
    }

    pub fn set_q(&mut self, q: BTreeMap<usize, DVector<f64>>) {
        self.state.q = q;
    }
}
