use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::area::AreaWorker;
use super::{init_factors, objective_decentralized, AdmmConfig, AreaState, ConvergenceTrace, FactorPair, Problem};
use crate::error::{Error, Result};
use crate::simnet::{CommLedger, MessageBus, Schedule};

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub schedule: Schedule,
    /// Ground truth for the RMSE trace.
    pub reference: Option<DMatrix<f64>>,
    /// Keep the assembled X after every iteration.
    pub record_iterates: bool,
}

#[derive(Clone, Debug)]
pub struct AdmmOutcome {
    /// Columns of area l hold U_l·V_l.
    pub x: DMatrix<f64>,
    pub factors: Vec<FactorPair>,
    /// Mean of the per-area basis factors.
    pub u_bar: DMatrix<f64>,
    pub trace: ConvergenceTrace,
    pub iterations: usize,
    pub converged: bool,
    pub ledger: CommLedger,
    pub iterates: Vec<DMatrix<f64>>,
}

/// Step-by-step driver. Each iteration is two bus rounds: factor and
/// flow-term exchange, then q-term exchange.
pub struct Admm<'a> {
    problem: Problem<'a>,
    cfg: AdmmConfig,
    workers: Vec<AreaWorker>,
    bus: Option<MessageBus>,
    iteration: usize,
    x: DMatrix<f64>,
}

impl<'a> Admm<'a> {
    pub fn decentralized(problem: Problem<'a>, cfg: &AdmmConfig, schedule: Schedule) -> Result<Self> {
        let part = problem.partition;
        let bus = MessageBus::new(part.n_areas(), part.adjacency().iter().copied(), schedule)?;
        Self::build(problem, cfg, Some(bus))
    }

    /// The single-area problem solved without a message bus.
    pub fn centralized(problem: Problem<'a>, cfg: &AdmmConfig) -> Result<Self> {
        if problem.partition.n_areas() != 1 {
            return Err(Error::UnsupportedConfig(format!(
                "centralized runs need a single-area partition, got {} areas",
                problem.partition.n_areas()
            )));
        }
        Self::build(problem, cfg, None)
    }

    fn build(problem: Problem<'a>, cfg: &AdmmConfig, bus: Option<MessageBus>) -> Result<Self> {
        let (m, n) = problem.shape();
        cfg.validate(m, n)?;
        let init = init_factors(problem.data, problem.mask, cfg.rank, cfg.seed)?;
        let part = problem.partition;
        let mut workers = Vec::with_capacity(part.n_areas());
        for l in 0..part.n_areas() {
            let cols = part.members(l);
            let v0 = DMatrix::from_fn(cfg.rank, cols.len(), |k, c| init.v[(k, cols[c])]);
            workers.push(AreaWorker::new(&problem, cfg, l, init.u.clone(), v0)?);
        }
        // q_lj starts at E_lj(X_j), so every coupling constraint holds exactly
        for l in 0..workers.len() {
            if !workers[l].has_flow() {
                continue;
            }
            let q: BTreeMap<usize, _> = workers[l]
                .neighbors
                .iter()
                .map(|&j| (j, workers[j].state.e_out[&l].clone()))
                .collect();
            workers[l].state.e_in = q.clone();
            workers[l].set_q(q);
        }
        let mut admm = Self {
            problem,
            cfg: cfg.clone(),
            workers,
            bus,
            iteration: 0,
            x: DMatrix::zeros(m, n),
        };
        admm.x = admm.assemble();
        Ok(admm)
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &AdmmConfig {
        &self.cfg
    }

    pub fn states(&self) -> impl Iterator<Item = &AreaState> {
        self.workers.iter().map(|w| &w.state)
    }

    pub fn state(&self, area: usize) -> &AreaState {
        &self.workers[area].state
    }

    #[cfg(test)]
    pub(crate) fn state_mut(&mut self, area: usize) -> &mut AreaState {
        &mut self.workers[area].state
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    fn assemble(&self) -> DMatrix<f64> {
        let (m, n) = self.problem.shape();
        let mut x = DMatrix::zeros(m, n);
        for w in &self.workers {
            let block = w.product();
            for (c, &col) in w.phases.iter().enumerate() {
                x.set_column(col, &block.column(c));
            }
        }
        x
    }

    pub fn factors(&self) -> Vec<FactorPair> {
        self.workers
            .iter()
            .map(|w| FactorPair {
                u: w.state.u.clone(),
                v: w.state.v.clone(),
            })
            .collect()
    }

    pub fn u_bar(&self) -> DMatrix<f64> {
        let mut sum = self.workers[0].state.u.clone() * 0.0;
        for w in &self.workers {
            sum += &w.state.u;
        }
        sum / self.workers.len() as f64
    }

    /// max over adjacent pairs of ‖U_l − U_j‖_F.
    pub fn consensus_residual(&self) -> f64 {
        self.problem
            .partition
            .adjacency()
            .iter()
            .map(|&(a, b)| (&self.workers[a].state.u - &self.workers[b].state.u).norm())
            .fold(0.0, f64::max)
    }

    pub fn objective(&self) -> Result<f64> {
        objective_decentralized(&self.problem, &self.factors(), self.cfg.mu, self.cfg.nu)
    }

    /// Sum of the area-local augmented Lagrangian pieces at the current
    /// iterate. Each primal block update can only decrease it.
    pub fn lagrangian(&self) -> f64 {
        self.workers
            .iter()
            .map(|w| w.local_lagrangian(&w.state.u, &w.state.v))
            .sum()
    }

    /// Run one U/V update of a single area outside the protocol; for tests.
    pub fn update_area(&mut self, area: usize, block: char) -> Result<()> {
        match block {
            'u' => self.workers[area].update_u(),
            'v' => self.workers[area].update_v(),
            _ => Err(Error::InvalidArgument(format!("unknown block {block}"))),
        }
    }

    pub fn local_lagrangian(&self, area: usize) -> f64 {
        let w = &self.workers[area];
        w.local_lagrangian(&w.state.u, &w.state.v)
    }

    pub fn local_lagrangian_at(&self, area: usize, u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
        self.workers[area].local_lagrangian(u, v)
    }

    /// One full iteration. Returns the relative change of X.
    pub fn step(&mut self) -> Result<f64> {
        // ledger iterations are 1-based like the trace
        let k = self.iteration + 1;
        match &mut self.bus {
            Some(bus) => {
                bus.run_round(k, &mut self.workers, |_, w, inbox| w.round_a(inbox))?;
                bus.run_round(k, &mut self.workers, |_, w, inbox| w.round_b(inbox))?;
            }
            None => {
                for w in &mut self.workers {
                    w.round_a(&[])?;
                    w.round_b(&[])?;
                }
            }
        }
        self.iteration += 1;
        let x = self.assemble();
        if x.iter().any(|e| !e.is_finite()) {
            return Err(Error::Divergence { iteration: self.iteration });
        }
        let scale = self.x.norm();
        let diff = (&x - &self.x).norm();
        self.x = x;
        Ok(if scale > 0.0 { diff / scale } else { diff })
    }

    pub fn max_area_ms(&self) -> f64 {
        self.workers.iter().map(|w| w.last_ms).fold(0.0, f64::max)
    }

    pub fn run(mut self, opts: &RunOptions) -> Result<AdmmOutcome> {
        let (m, n) = self.problem.shape();
        if let Some(r) = &opts.reference {
            if r.shape() != (m, n) {
                return Err(Error::Dimension(format!("reference is {}x{}, data is {m}x{n}", r.nrows(), r.ncols())));
            }
        }
        let mut trace = ConvergenceTrace::default();
        let mut iterates = Vec::new();
        let mut converged = false;
        while self.iteration < self.cfg.max_iters {
            let change = self.step()?;
            let consensus = self.consensus_residual();
            let rmse = match &opts.reference {
                Some(r) => (&self.x - r).norm() / ((m * n) as f64).sqrt(),
                None => f64::NAN,
            };
            trace.rmse.push(rmse);
            trace.objective.push(self.objective()?);
            trace.consensus.push(consensus);
            trace.change.push(change);
            trace.max_area_ms.push(self.max_area_ms());
            if opts.record_iterates {
                iterates.push(self.x.clone());
            }
            if consensus < self.cfg.tol && change < self.cfg.tol {
                converged = true;
                break;
            }
        }
        let u_bar = self.u_bar();
        let factors = self.factors();
        let ledger = match self.bus {
            Some(bus) => bus.into_ledger(),
            None => CommLedger::new([]),
        };
        Ok(AdmmOutcome {
            x: self.x,
            factors,
            u_bar,
            trace,
            iterations: self.iteration,
            converged,
            ledger,
            iterates,
        })
    }
}

pub fn run_decentralized(problem: Problem<'_>, cfg: &AdmmConfig, opts: &RunOptions) -> Result<AdmmOutcome> {
    Admm::decentralized(problem, cfg, opts.schedule)?.run(opts)
}

pub fn run_centralized(problem: Problem<'_>, cfg: &AdmmConfig, opts: &RunOptions) -> Result<AdmmOutcome> {
    Admm::centralized(problem, cfg)?.run(opts)
}
