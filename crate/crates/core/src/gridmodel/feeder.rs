use std::f64::consts::PI;

use nalgebra::Matrix3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{CMatrix, CVector, LoadScenario, NetworkModel, Phase, PhaseIndex};
use crate::error::{Error, Result};

/// Off-diagonal share of the self impedance in three-phase mode.
const PHASE_COUPLING: f64 = 0.3;
/// Relative growth of every load over the horizon.
const LOAD_RAMP: f64 = 0.05;
/// Relative standard deviation of the per-step load noise.
const LOAD_NOISE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeederSpec {
    pub n_buses: usize,
    /// Probability that a new bus starts a lateral instead of extending the
    /// previous one.
    pub branching: f64,
    /// Per-unit series impedance, sampled uniformly in the rectangle spanned
    /// by the two corners.
    pub impedance_range: (Complex64, Complex64),
    /// Conductor tapering: a segment `d` branches away from the slack has its
    /// sampled impedance scaled by `1 + taper·(d − 1)`.
    pub taper: f64,
    /// Per-unit consumed power (P + jQ) per phase at t = 0.
    pub load_range: (Complex64, Complex64),
    pub time_steps: usize,
    pub three_phase: bool,
    pub seed: u64,
}

impl FeederSpec {
    pub fn new(n_buses: usize, seed: u64) -> Self {
        Self {
            n_buses,
            branching: 0.15,
            impedance_range: (Complex64::new(0.0006, 0.00045), Complex64::new(0.0017, 0.0013)),
            taper: 1.0,
            load_range: (Complex64::new(0.008, 0.004), Complex64::new(0.025, 0.012)),
            time_steps: 10,
            three_phase: false,
            seed,
        }
    }

    pub fn with_time_steps(mut self, t: usize) -> Self {
        self.time_steps = t;
        self
    }

    pub fn three_phase(mut self, yes: bool) -> Self {
        self.three_phase = yes;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_buses < 2 {
            return Err(Error::InvalidArgument(format!(
                "a feeder needs at least 2 buses, got {}",
                self.n_buses
            )));
        }
        if !(self.branching > 0.0 && self.branching <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "branching must lie in (0, 1], got {}",
                self.branching
            )));
        }
        if !(self.taper >= 0.0) {
            return Err(Error::InvalidArgument(format!("taper must be nonnegative, got {}", self.taper)));
        }
        if self.time_steps == 0 {
            return Err(Error::InvalidArgument("time_steps must be positive".into()));
        }
        let (z_lo, z_hi) = self.impedance_range;
        if z_lo.re <= 0.0 || z_hi.re < z_lo.re || z_hi.im < z_lo.im || z_lo.im < 0.0 {
            return Err(Error::InvalidArgument(
                "impedance range must have positive resistance and ordered corners".into(),
            ));
        }
        let (l_lo, l_hi) = self.load_range;
        if l_hi.re < l_lo.re || l_hi.im < l_lo.im {
            return Err(Error::InvalidArgument("load range corners are not ordered".into()));
        }
        Ok(())
    }
}

/// A generated radial feeder together with its topology.
#[derive(Clone, Debug)]
pub struct Feeder {
    pub network: NetworkModel,
    pub loads: LoadScenario,
    /// `parents[k]` is the upstream bus of bus `k`; bus 0 is the slack and
    /// is its own parent.
    pub parents: Vec<usize>,
}

impl Feeder {
    pub fn n_branches(&self) -> usize {
        self.parents.len() - 1
    }
}

fn uniform_in(rng: &mut ChaCha8Rng, lo: Complex64, hi: Complex64) -> Complex64 {
    Complex64::new(
        lo.re + rng.random::<f64>() * (hi.re - lo.re),
        lo.im + rng.random::<f64>() * (hi.im - lo.im),
    )
}

pub fn generate_radial_feeder(spec: &FeederSpec) -> Result<Feeder> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_buses;

    let mut parents = vec![0usize; n];
    let mut impedances = vec![Complex64::new(0.0, 0.0); n];
    let mut depth = vec![0usize; n];
    for k in 1..n {
        parents[k] = if k == 1 || rng.random::<f64>() >= spec.branching {
            k - 1
        } else {
            rng.random_range(0..k - 1)
        };
        depth[k] = depth[parents[k]] + 1;
        let scale = 1.0 + spec.taper * (depth[k] - 1) as f64;
        impedances[k] = uniform_in(&mut rng, spec.impedance_range.0, spec.impedance_range.1) * scale;
    }

    let per_bus = if spec.three_phase { 3 } else { 1 };
    let dim = n * per_bus;
    let mut y_bus = CMatrix::zeros(dim, dim);
    for k in 1..n {
        let block = branch_admittance(impedances[k], per_bus)?;
        let (c, p) = (k * per_bus, parents[k] * per_bus);
        for a in 0..per_bus {
            for b in 0..per_bus {
                let y = block[(a, b)];
                y_bus[(c + a, c + b)] += y;
                y_bus[(p + a, p + b)] += y;
                y_bus[(c + a, p + b)] -= y;
                y_bus[(p + a, c + b)] -= y;
            }
        }
    }
    let y_ll = y_bus.view((per_bus, per_bus), (dim - per_bus, dim - per_bus)).into_owned();
    let y_l0 = y_bus.view((per_bus, 0), (dim - per_bus, per_bus)).into_owned();

    let v0 = if spec.three_phase {
        CVector::from_iterator(
            3,
            (0..3).map(|a| Complex64::from_polar(1.0, -2.0 * PI * a as f64 / 3.0)),
        )
    } else {
        CVector::from_element(1, Complex64::new(1.0, 0.0))
    };

    let mut entries = Vec::with_capacity(dim - per_bus);
    for k in 1..n {
        if spec.three_phase {
            for ph in Phase::ALL {
                entries.push((k.to_string(), ph));
            }
        } else {
            entries.push((k.to_string(), Phase::A));
        }
    }
    let index = PhaseIndex::new(entries, per_bus)?;
    let network = NetworkModel::new(y_ll, y_l0, v0, index)?;

    let n_phases = network.n_phases();
    let base: Vec<Complex64> = (0..n_phases)
        .map(|_| uniform_in(&mut rng, spec.load_range.0, spec.load_range.1))
        .collect();
    let t_steps = spec.time_steps;
    let mut s = CMatrix::zeros(t_steps, n_phases);
    for t in 0..t_steps {
        let ramp = 1.0 + LOAD_RAMP * t as f64 / t_steps as f64;
        for (i, b) in base.iter().enumerate() {
            let eps: f64 = rng.sample(StandardNormal);
            s[(t, i)] = -b * (ramp * (1.0 + LOAD_NOISE * eps));
        }
    }
    let loads = LoadScenario::new(s)?;

    Ok(Feeder {
        network,
        loads,
        parents,
    })
}

fn branch_admittance(z: Complex64, per_bus: usize) -> Result<CMatrix> {
    if per_bus == 1 {
        return Ok(CMatrix::from_element(1, 1, z.inv()));
    }
    let off = z * PHASE_COUPLING;
    let zm = Matrix3::new(z, off, off, off, z, off, off, off, z);
    let ym = zm
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("singular branch impedance".into()))?;
    Ok(CMatrix::from_fn(3, 3, |a, b| ym[(a, b)]))
}
