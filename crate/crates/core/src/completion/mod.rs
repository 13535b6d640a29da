//! Low-rank completion of the measurement matrix.
//!
//! The estimate X = UV minimizes
//! ½(‖U‖²+‖V‖²) + μ/2‖P_Ω(UV−M)‖² + ν/2 Σ_l ‖E_ll(X)+Σ_j E_lj(X)−f_l‖²,
//! the factored form of nuclear-norm regularized completion with a linear
//! load-flow penalty. [`run_decentralized`] splits it over areas and solves it
//! with a proximal ADMM whose messages travel over [`crate::simnet`].

mod admm;
mod area;
mod svt;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datamatrix::ObservationMask;
use crate::error::{Error, Result};
use crate::gridmodel::AreaPartition;
use crate::linflow::AreaMaps;

pub use admm::{run_centralized, run_decentralized, Admm, AdmmOutcome, RunOptions};
pub use area::{update_q, update_s, AreaState};
pub use svt::{singular_value_threshold, svt_oracle, svt_objective};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub mu: f64,
    pub nu: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub prox_c: f64,
    pub rank: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl AdmmConfig {
    /// Defaults for an m-row matrix.
    pub fn for_rows(m: usize) -> Self {
        Self {
            mu: 10.0,
            nu: 1.0,
            gamma: 1.0,
            lambda: 1.0,
            prox_c: 0.1,
            rank: m.min(10),
            max_iters: 500,
            tol: 1e-6,
            seed: 0,
        }
    }

    pub fn validate(&self, m: usize, n: usize) -> Result<()> {
        let positive = [("mu", self.mu), ("gamma", self.gamma), ("lambda", self.lambda)];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::UnsupportedConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.nu >= 0.0) || !(self.prox_c >= 0.0) {
            return Err(Error::UnsupportedConfig("nu and prox_c must be nonnegative".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::UnsupportedConfig("tol must be positive".into()));
        }
        if self.rank == 0 || self.rank > m.min(n) {
            return Err(Error::UnsupportedConfig(format!(
                "rank {} outside 1..={} for a {m}x{n} matrix",
                self.rank,
                m.min(n)
            )));
        }
        Ok(())
    }
}

/// X ≈ U·V with U m×r and V r×n.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorPair {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl FactorPair {
    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn product(&self) -> DMatrix<f64> {
        &self.u * &self.v
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ConvergenceTrace {
    /// ‖X − reference‖_F/√(mn); NaN when no reference was supplied.
    pub rmse: Vec<f64>,
    pub objective: Vec<f64>,
    /// max over adjacent pairs of ‖U_l − U_j‖_F.
    pub consensus: Vec<f64>,
    /// ‖X^{k+1} − X^k‖_F / ‖X^k‖_F.
    pub change: Vec<f64>,
    /// Slowest area's compute time per iteration.
    #[serde(skip)]
    pub max_area_ms: Vec<f64>,
}

impl ConvergenceTrace {
    pub fn len(&self) -> usize {
        self.objective.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objective.is_empty()
    }
}

/// Observed data, mask, and optionally the load-flow maps. Without maps the
/// problem is plain regularized completion.
#[derive(Clone, Copy, Debug)]
pub struct Problem<'a> {
    pub data: &'a DMatrix<f64>,
    pub mask: &'a ObservationMask,
    pub partition: &'a AreaPartition,
    pub maps: Option<&'a AreaMaps>,
}

impl<'a> Problem<'a> {
    pub fn new(data: &'a DMatrix<f64>, mask: &'a ObservationMask, partition: &'a AreaPartition) -> Result<Self> {
        if data.shape() != mask.shape() {
            return Err(Error::Dimension(format!(
                "data is {}x{}, mask is {}x{}",
                data.nrows(),
                data.ncols(),
                mask.shape().0,
                mask.shape().1
            )));
        }
        if partition.n_phases() != data.ncols() {
            return Err(Error::Dimension(format!(
                "partition covers {} columns, data has {}",
                partition.n_phases(),
                data.ncols()
            )));
        }
        Ok(Self {
            data,
            mask,
            partition,
            maps: None,
        })
    }

    pub fn with_flow(data: &'a DMatrix<f64>, mask: &'a ObservationMask, maps: &'a AreaMaps) -> Result<Self> {
        let mut p = Self::new(data, mask, maps.partition())?;
        if maps.rows() != data.nrows() {
            return Err(Error::Dimension(format!(
                "maps expect {} rows, data has {}",
                maps.rows(),
                data.nrows()
            )));
        }
        p.maps = Some(maps);
        Ok(p)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.shape()
    }
}

fn masked_sq(x: &DMatrix<f64>, data: &DMatrix<f64>, mask: &ObservationMask) -> f64 {
    mask.entries().map(|(r, c)| (x[(r, c)] - data[(r, c)]).powi(2)).sum()
}

/// Σ_l ‖E_ll(X)+Σ_j E_lj(X)−f_l‖².
pub fn flow_penalty(maps: &AreaMaps, x: &DMatrix<f64>) -> Result<f64> {
    let mut sum = 0.0;
    for l in 0..maps.n_areas() {
        sum += maps.residual(l, x)?.norm_squared();
    }
    Ok(sum)
}

/// ½(‖U‖²+‖V‖²) + μ/2‖P_Ω(UV−M)‖² + ν/2·(load-flow penalty).
pub fn objective_factored(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    data: &DMatrix<f64>,
    mask: &ObservationMask,
    maps: Option<&AreaMaps>,
    mu: f64,
    nu: f64,
) -> Result<f64> {
    if u.ncols() != v.nrows() || (u.nrows(), v.ncols()) != data.shape() || data.shape() != mask.shape() {
        return Err(Error::Dimension("factor, data and mask shapes disagree".into()));
    }
    let x = u * v;
    let mut obj = 0.5 * (u.norm_squared() + v.norm_squared()) + 0.5 * mu * masked_sq(&x, data, mask);
    if let Some(maps) = maps {
        if nu != 0.0 {
            obj += 0.5 * nu * flow_penalty(maps, &x)?;
        }
    }
    Ok(obj)
}

/// The objective split over areas: every area keeps its own copy U_l of the
/// basis factor and the columns V_l of its phases.
/// Σ_l ½(‖U_l‖²/n_A+‖V_l‖²) + μ/2‖P_Ωl(U_lV_l−M_l)‖²
///     + ν/2‖E_ll(U_lV_l)+Σ_j E_lj(U_jV_j)−f_l‖².
pub fn objective_decentralized(problem: &Problem<'_>, factors: &[FactorPair], mu: f64, nu: f64) -> Result<f64> {
    let part = problem.partition;
    if factors.len() != part.n_areas() {
        return Err(Error::Dimension(format!(
            "{} factor pairs for {} areas",
            factors.len(),
            part.n_areas()
        )));
    }
    let n_a = part.n_areas() as f64;
    let blocks: Vec<DMatrix<f64>> = factors.iter().map(FactorPair::product).collect();
    let mut obj = 0.0;
    for (l, fp) in factors.iter().enumerate() {
        if fp.v.ncols() != part.members(l).len() || fp.u.nrows() != problem.data.nrows() {
            return Err(Error::Dimension(format!("factor shapes of area {l}")));
        }
        obj += 0.5 * (fp.u.norm_squared() / n_a + fp.v.norm_squared());
        for (jl, &j) in part.members(l).iter().enumerate() {
            for r in 0..problem.data.nrows() {
                if problem.mask.contains(r, j) {
                    obj += 0.5 * mu * (blocks[l][(r, jl)] - problem.data[(r, j)]).powi(2);
                }
            }
        }
        if let Some(maps) = problem.maps {
            if nu != 0.0 {
                obj += 0.5 * nu * maps.residual_from(l, |k| blocks[k].clone())?.norm_squared();
            }
        }
    }
    Ok(obj)
}

/// U = ŨΣ^{1/2}, V = Σ^{1/2}Ṽᵀ from the rank-r SVD of X. The largest-magnitude
/// entry of each left singular vector is made positive.
pub fn balanced_factors(x: &DMatrix<f64>, r: usize) -> FactorPair {
    let svd = crate::svd::thin_svd(x);
    let k = r.min(svd.sigma.len());
    let mut u = DMatrix::zeros(x.nrows(), r);
    let mut v = DMatrix::zeros(r, x.ncols());
    for c in 0..k {
        let s = svd.sigma[c].max(0.0).sqrt();
        let col = svd.u.column(c);
        let pivot = col.iter().copied().fold(0.0f64, |acc, e| if e.abs() > acc.abs() { e } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        u.set_column(c, &(col * (sign * s)));
        v.set_row(c, &(svd.v.column(c).transpose() * (sign * s)));
    }
    FactorPair { u, v }
}

/// Balanced rank-r factors of P_Ω(M); seeded Gaussian factors with entries of
/// standard deviation 1/√r when P_Ω(M) has numerical rank below r.
pub fn init_factors(data: &DMatrix<f64>, mask: &ObservationMask, r: usize, seed: u64) -> Result<FactorPair> {
    let (m, n) = data.shape();
    if r == 0 || r > m.min(n) {
        return Err(Error::InvalidArgument(format!("rank {r} outside 1..={}", m.min(n))));
    }
    let observed = crate::datamatrix::apply_mask(data, mask)?;
    let sv = crate::datamatrix::sv_spectrum(&observed);
    let tol = m.max(n) as f64 * f64::EPSILON * sv.first().copied().unwrap_or(0.0);
    let rank = sv.iter().filter(|&&s| s > tol).count();
    if rank >= r {
        return Ok(balanced_factors(&observed, r));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (r as f64).sqrt();
    let mut draw = |rows: usize, cols: usize| {
        DMatrix::from_fn(rows, cols, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
    };
    let u = draw(m, r);
    let v = draw(r, n);
    Ok(FactorPair { u, v })
}

/// Σσᵢ(X).
pub fn nuclear_norm(x: &DMatrix<f64>) -> f64 {
    crate::datamatrix::sv_spectrum(x).iter().sum()
}
