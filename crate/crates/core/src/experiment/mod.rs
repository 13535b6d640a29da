//! End-to-end estimation experiment: ground truth, sampling, estimation,
//! metrics and certificate, written as results.json, trace.csv and
//! spectrum.csv.
//!
//! Run `k` of an experiment with seed `s` samples its mask with seed `s + k`,
//! its noise with seed `s + k + NOISE_SEED_OFFSET` and initializes the
//! factors with seed `s + k`. The network is the same for every run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::certificate::{build_b_d, certify, CertificateReport};
use crate::completion::{run_centralized, run_decentralized, AdmmConfig, AdmmOutcome, Problem, RunOptions};
use crate::datamatrix::{add_noise, build_matrix, sample_mask, sv_spectrum, voltage_rows, MaskPolicy};
use crate::error::{Error, Result};
use crate::gridmodel::{generate_radial_feeder, load_network, solve_scenario, AreaPartition, FeederSpec, LoadScenario, NetworkModel};
use crate::linflow::{build_area_maps, build_linear_model, truncate_model, truncation_error};
use crate::metrics::{aggregate, evaluate_estimate, EstimateReport};
use crate::simnet::{comm_count, ExchangeSizes, Schedule};

const NOISE_SEED_OFFSET: u64 = 1_000_003;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const GIT_DESCRIBE: &str = env!("GRIDMC_GIT_DESCRIBE");

pub fn version_string() -> String {
    if GIT_DESCRIBE.is_empty() {
        VERSION.to_string()
    } else {
        format!("{VERSION}+{GIT_DESCRIBE}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetworkSource {
    Generated(FeederSpec),
    Manifest { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionChoice {
    /// Breadth-first contiguous areas of the feeder.
    Contiguous { areas: usize },
    /// The partition shipped with a manifest network.
    Manifest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub network: NetworkSource,
    pub time_steps: usize,
    pub mask_policy: MaskPolicy,
    pub fraction: f64,
    pub noise_pct: f64,
    pub partition: PartitionChoice,
    pub admm: AdmmConfig,
    pub n_runs: usize,
    pub seed: u64,
    /// Where `run_experiment` writes; not part of the results payload.
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// 33-bus synthetic feeder, T = 5, half of the SCADA cells observed with
    /// 1% noise and five contiguous areas.
    pub fn desk_scale(seed: u64) -> Self {
        let time_steps = 5;
        Self {
            network: NetworkSource::Generated(FeederSpec::new(33, seed).with_time_steps(time_steps)),
            time_steps,
            mask_policy: MaskPolicy::Scada,
            fraction: 0.5,
            noise_pct: 1.0,
            partition: PartitionChoice::Contiguous { areas: 5 },
            admm: AdmmConfig::for_rows(5 * time_steps),
            n_runs: 1,
            seed,
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.time_steps == 0 {
            return bad("time_steps must be positive".into());
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad(format!("fraction must lie in (0, 1], got {}", self.fraction));
        }
        if !(self.noise_pct >= 0.0 && self.noise_pct.is_finite()) {
            return bad(format!("noise_pct must be nonnegative, got {}", self.noise_pct));
        }
        if self.n_runs == 0 {
            return bad("n_runs must be positive".into());
        }
        match (&self.network, &self.partition) {
            (NetworkSource::Generated(spec), _) if spec.time_steps < self.time_steps => {
                return bad(format!(
                    "generator produces {} time steps, {} requested",
                    spec.time_steps, self.time_steps
                ))
            }
            (NetworkSource::Generated(_), PartitionChoice::Manifest) => {
                return bad("a generated network has no manifest partition".into())
            }
            (_, PartitionChoice::Contiguous { areas: 0 }) => return bad("areas must be positive".into()),
            _ => {}
        }
        // the column count is only known once the network is built
        self.admm.validate(5 * self.time_steps, usize::MAX)
    }
}

/// Per-pair traffic in the first iteration of a run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairTraffic {
    /// 1-based area ids.
    pub pair: (usize, usize),
    pub measured: usize,
    pub protocol_formula: usize,
    pub nominal_formula: usize,
    pub full_data: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CommSummary {
    pub total: usize,
    pub pairs: Vec<PairTraffic>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub run: usize,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub final_consensus: f64,
    pub final_change: f64,
    pub estimate: EstimateReport,
    /// Certificate of (Ū, V), V assembled from every area's columns.
    pub certificate: CertificateReport,
    pub comm: CommSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultsPayload {
    pub version: String,
    pub config: ExperimentConfig,
    pub n_phases: usize,
    pub n_areas: usize,
    pub truncation_error: f64,
    pub estimate: EstimateReport,
    pub runs: Vec<RunReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metadata {
    pub created_unix_s: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResultsFile<'a> {
    pub results: &'a ResultsPayload,
    pub metadata: Metadata,
}

/// Everything an experiment produces, before it is written out.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub payload: ResultsPayload,
    /// Outcome of every run, by run index.
    pub outcomes: Vec<AdmmOutcome>,
    /// Singular values of the first run's estimate.
    pub spectrum: Vec<f64>,
}

struct Setup {
    net: NetworkModel,
    loads: LoadScenario,
    partition: AreaPartition,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let (net, loads, shipped) = match &cfg.network {
        NetworkSource::Generated(spec) => {
            let f = generate_radial_feeder(spec)?;
            (f.network, f.loads, None)
        }
        NetworkSource::Manifest { path } => {
            let (net, loads, part) = load_network(path)?;
            (net, loads, Some(part))
        }
    };
    if loads.time_steps() < cfg.time_steps {
        return Err(Error::InvalidArgument(format!(
            "load scenario has {} time steps, {} requested",
            loads.time_steps(),
            cfg.time_steps
        )));
    }
    let loads = loads.truncated(cfg.time_steps)?;
    let partition = match (&cfg.partition, shipped) {
        (PartitionChoice::Contiguous { areas: 1 }, _) => AreaPartition::single(net.n_phases())?,
        (PartitionChoice::Contiguous { areas }, _) => AreaPartition::contiguous(&net, *areas)?,
        (PartitionChoice::Manifest, Some(p)) => p,
        (PartitionChoice::Manifest, None) => {
            return Err(Error::InvalidArgument("a generated network has no manifest partition".into()))
        }
    };
    Ok(Setup { net, loads, partition })
}

/// Run every repetition of `cfg` in memory. Runs execute on parallel threads
/// and are merged by run index; `schedule` orders the area workers inside
/// each ADMM round.
pub fn execute(cfg: &ExperimentConfig, schedule: Schedule) -> Result<ExperimentResult> {
    cfg.validate()?;
    let Setup { net, loads, partition } = setup(cfg)?;
    let v_true = solve_scenario(&net, &loads)?;
    let truth = build_matrix(&v_true, loads.matrix())?.into_data();
    let (m, n) = truth.shape();
    cfg.admm.validate(m, n)?;

    let model = build_linear_model(&net, cfg.time_steps)?;
    let truncated = truncate_model(&model, &partition)?;
    let trunc_err = truncation_error(&model, truncated.linear())?;
    let maps = build_area_maps(&truncated);

    let single = partition.n_areas() == 1;
    let runs: Vec<Result<(RunReport, AdmmOutcome)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.n_runs)
            .map(|k| {
                let (truth, maps, partition, v_true) = (&truth, &maps, &partition, &v_true);
                scope.spawn(move || -> Result<(RunReport, AdmmOutcome)> {
                    let seed = cfg.seed.wrapping_add(k as u64);
                    let mask = sample_mask(m, n, cfg.fraction, cfg.mask_policy, seed)?;
                    let noisy = add_noise(truth, cfg.noise_pct, seed.wrapping_add(NOISE_SEED_OFFSET))?;
                    let problem = Problem::with_flow(&noisy, &mask, maps)?;
                    let admm = AdmmConfig { seed, ..cfg.admm.clone() };
                    let opts = RunOptions {
                        schedule,
                        reference: Some(truth.clone()),
                        record_iterates: false,
                    };
                    let out = if single {
                        run_centralized(problem, &admm, &opts)?
                    } else {
                        run_decentralized(problem, &admm, &opts)?
                    };
                    let estimate = evaluate_estimate(&voltage_rows(&out.x)?, v_true)?;

                    let op = build_b_d(&mask, &noisy, Some(maps), admm.mu, admm.nu)?;
                    let v_full = global_v(&out, partition);
                    let certificate = certify(&out.u_bar, &v_full, &op, admm.mu)?;
                    let comm = comm_summary(&out, partition, m, admm.rank, cfg.time_steps)?;
                    let report = RunReport {
                        run: k,
                        seed,
                        iterations: out.iterations,
                        converged: out.converged,
                        final_consensus: out.trace.consensus.last().copied().unwrap_or(0.0),
                        final_change: out.trace.change.last().copied().unwrap_or(0.0),
                        estimate,
                        certificate,
                        comm,
                    };
                    Ok((report, out))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidArgument("experiment run panicked".into()))))
            .collect()
    });

    let mut reports = Vec::with_capacity(cfg.n_runs);
    let mut outcomes = Vec::with_capacity(cfg.n_runs);
    for r in runs {
        let (report, out) = r?;
        reports.push(report);
        outcomes.push(out);
    }
    let estimate = aggregate(&reports.iter().map(|r| r.estimate.clone()).collect::<Vec<_>>())?;
    let spectrum = sv_spectrum(&outcomes[0].x);
    Ok(ExperimentResult {
        payload: ResultsPayload {
            version: version_string(),
            config: cfg.clone(),
            n_phases: n,
            n_areas: partition.n_areas(),
            truncation_error: trunc_err,
            estimate,
            runs: reports,
        },
        outcomes,
        spectrum,
    })
}

/// V of the whole matrix, each area's columns taken from its own factor.
fn global_v(out: &AdmmOutcome, partition: &AreaPartition) -> DMatrix<f64> {
    let r = out.u_bar.ncols();
    let mut v = DMatrix::zeros(r, partition.n_phases());
    for (area, f) in out.factors.iter().enumerate() {
        for (c, &phase) in partition.members(area).iter().enumerate() {
            v.set_column(phase, &f.v.column(c));
        }
    }
    v
}

fn comm_summary(out: &AdmmOutcome, partition: &AreaPartition, m: usize, r: usize, t: usize) -> Result<CommSummary> {
    let mut pairs = Vec::new();
    for &(a, b) in partition.adjacency() {
        let sizes = ExchangeSizes {
            m,
            r,
            time_steps: t,
            n_l: partition.members(a).len(),
            n_j: partition.members(b).len(),
        };
        let c = comm_count(&out.ledger, (a, b), 1, &sizes)?;
        pairs.push(PairTraffic {
            pair: (a + 1, b + 1),
            measured: c.measured,
            protocol_formula: c.protocol_formula,
            nominal_formula: c.nominal_formula,
            full_data: sizes.full_data_count(),
        });
    }
    Ok(CommSummary {
        total: out.ledger.total(),
        pairs,
    })
}

/// results.json body without the metadata wrapper; stable across reruns.
pub fn payload_json(payload: &ResultsPayload) -> Result<String> {
    Ok(serde_json::to_string_pretty(payload)?)
}

fn write_all(dir: &Path, result: &ExperimentResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let created_unix_s = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let file = ResultsFile {
        results: &result.payload,
        metadata: Metadata { created_unix_s },
    };
    let path = dir.join("results.json");
    fs::write(&path, serde_json::to_string_pretty(&file)? + "\n").map_err(|e| Error::io(&path, e))?;

    let trace = &result.outcomes[0].trace;
    let mut w = csv::Writer::from_path(dir.join("trace.csv"))?;
    w.write_record(["iter", "rmse", "consensus", "objective", "max_area_ms"])?;
    for i in 0..trace.rmse.len() {
        w.write_record([
            (i + 1).to_string(),
            trace.rmse[i].to_string(),
            trace.consensus[i].to_string(),
            trace.objective[i].to_string(),
            trace.max_area_ms[i].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(dir.join("trace.csv"), e))?;

    let mut w = csv::Writer::from_path(dir.join("spectrum.csv"))?;
    w.write_record(["index", "sigma"])?;
    for (i, s) in result.spectrum.iter().enumerate() {
        w.write_record([(i + 1).to_string(), s.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(dir.join("spectrum.csv"), e))?;
    Ok(())
}

pub const OUTPUT_FILES: [&str; 3] = ["results.json", "trace.csv", "spectrum.csv"];

/// Write the result files into `dir`. On failure nothing is left behind.
pub fn write_outputs(dir: &Path, result: &ExperimentResult) -> Result<()> {
    write_all(dir, result).inspect_err(|_| {
        for f in OUTPUT_FILES {
            let _ = fs::remove_file(dir.join(f));
        }
    })
}

/// Execute `cfg` and write its outputs to `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let dir = cfg
        .out_dir
        .clone()
        .ok_or_else(|| Error::InvalidArgument("no output directory configured".into()))?;
    let result = execute(cfg, Schedule::InOrder)?;
    write_outputs(&dir, &result)?;
    Ok(result)
}

/// Parameter swept by [`sweep`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Fraction,
    TimeSteps,
    Areas,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fraction" => Ok(SweepParam::Fraction),
            "time-steps" | "time_steps" => Ok(SweepParam::TimeSteps),
            "areas" => Ok(SweepParam::Areas),
            other => Err(Error::InvalidArgument(format!("cannot sweep '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub estimate: EstimateReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub param: SweepParam,
    pub points: Vec<SweepPoint>,
    /// Whether MAPE, smoothed over 3 adjacent points, never increases.
    pub mape_trend_nonincreasing: bool,
}

pub fn with_param(base: &ExperimentConfig, param: SweepParam, value: f64) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    let as_count = |v: f64| {
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::InvalidArgument(format!("{v} is not a positive integer")))
        }
    };
    match param {
        SweepParam::Fraction => cfg.fraction = value,
        SweepParam::TimeSteps => {
            let t = as_count(value)?;
            cfg.time_steps = t;
            cfg.admm.rank = cfg.admm.rank.min(5 * t);
            if let NetworkSource::Generated(spec) = &mut cfg.network {
                spec.time_steps = spec.time_steps.max(t);
            }
        }
        SweepParam::Areas => cfg.partition = PartitionChoice::Contiguous { areas: as_count(value)? },
    }
    Ok(cfg)
}

/// 3-point moving average, shrinking at the ends.
pub fn smooth3(values: &[f64]) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 2).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

pub fn is_nonincreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0])
}

/// Run `base` once per value of `param`, writing each point's outputs to a
/// numbered subdirectory of `base.out_dir` when one is set.
pub fn sweep(base: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<SweepReport> {
    let mut points = Vec::with_capacity(values.len());
    for (i, &value) in values.iter().enumerate() {
        let mut cfg = with_param(base, param, value)?;
        let result = execute(&cfg, Schedule::InOrder)?;
        if let Some(dir) = cfg.out_dir.take() {
            write_outputs(&dir.join(format!("point_{i:02}")), &result)?;
        }
        points.push(SweepPoint {
            value,
            estimate: result.payload.estimate,
        });
    }
    let mape: Vec<f64> = points.iter().map(|p| p.estimate.mape_magnitude).collect();
    Ok(SweepReport {
        param,
        mape_trend_nonincreasing: is_nonincreasing(&smooth3(&mape)),
        points,
    })
}

#[cfg(test)]
mod tests;
