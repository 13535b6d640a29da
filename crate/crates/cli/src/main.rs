use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gridmc::completion::AdmmConfig;
use gridmc::datamatrix::{build_matrix, energy_fraction, read_matrix_csv, sv_spectrum, MaskPolicy};
use gridmc::experiment::{
    execute, run_experiment, sweep, write_outputs, ExperimentConfig, NetworkSource, PartitionChoice, SweepParam,
};
use gridmc::gridmodel::{generate_radial_feeder, load_network, mtx, solve_scenario, write_network, AreaPartition, FeederSpec};
use gridmc::linflow::{build_linear_model, truncate_model, truncation_error};
use gridmc::simnet::Schedule;

#[derive(Parser)]
#[command(name = "gridmc", version, about = "Matrix-completion state estimation for distribution feeders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic radial feeder and write it as a manifest.
    GenFeeder(GenFeederArgs),
    /// Build the linear load-flow model and report the truncation error.
    BuildModel(BuildModelArgs),
    /// Run one experiment and write results.json, trace.csv and spectrum.csv.
    Run(ExperimentArgs),
    /// Repeat an experiment over a range of one parameter.
    Sweep(SweepArgs),
    /// Run an experiment and report the optimality certificate of every run.
    Certify(CertifyArgs),
    /// Singular values of the true measurement matrix or of a CSV matrix.
    Spectrum(SpectrumArgs),
}

#[derive(Args)]
struct GenFeederArgs {
    #[arg(long, default_value_t = 33)]
    buses: usize,
    #[arg(long, default_value_t = 10)]
    time_steps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    three_phase: bool,
    #[arg(long, default_value_t = 1)]
    areas: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct NetworkArgs {
    /// Network manifest; a synthetic feeder is generated when absent.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 33)]
    buses: usize,
    /// Generator seed; defaults to --seed.
    #[arg(long)]
    network_seed: Option<u64>,
    #[arg(long)]
    three_phase: bool,
    #[arg(long, default_value_t = 5)]
    time_steps: usize,
    /// Number of contiguous areas; 0 keeps the manifest's partition.
    #[arg(long, default_value_t = 5)]
    areas: usize,
}

#[derive(Args)]
struct BuildModelArgs {
    #[command(flatten)]
    network: NetworkArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Directory for w.mtx and n.mtx of the first time step.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    /// JSON experiment configuration; overrides every other flag.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    network: NetworkArgs,
    #[arg(long, default_value = "scada")]
    mask: MaskPolicy,
    #[arg(long, default_value_t = 0.5)]
    fraction: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_pct: f64,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, default_value_t = 10.0)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    nu: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    prox_c: f64,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// fraction, time-steps or areas.
    #[arg(long)]
    param: SweepParam,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Halve μ and re-solve until the spectral condition holds.
    #[arg(long)]
    shrink_mu: bool,
}

#[derive(Args)]
struct SpectrumArgs {
    /// Real matrix as CSV; the true measurement matrix is used when absent.
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[command(flatten)]
    network: NetworkArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn network_source(net: &NetworkArgs, seed: u64) -> NetworkSource {
    match &net.manifest {
        Some(path) => NetworkSource::Manifest { path: path.clone() },
        None => NetworkSource::Generated(
            FeederSpec::new(net.buses, net.network_seed.unwrap_or(seed))
                .with_time_steps(net.time_steps)
                .three_phase(net.three_phase),
        ),
    }
}

fn partition_choice(net: &NetworkArgs) -> PartitionChoice {
    match net.areas {
        0 => PartitionChoice::Manifest,
        areas => PartitionChoice::Contiguous { areas },
    }
}

fn experiment_config(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => {
            let t = args.network.time_steps;
            let defaults = AdmmConfig::for_rows(5 * t);
            ExperimentConfig {
                network: network_source(&args.network, args.seed),
                time_steps: t,
                mask_policy: args.mask,
                fraction: args.fraction,
                noise_pct: args.noise_pct,
                partition: partition_choice(&args.network),
                admm: AdmmConfig {
                    mu: args.mu,
                    nu: args.nu,
                    gamma: args.gamma,
                    lambda: args.lambda,
                    prox_c: args.prox_c,
                    rank: args.rank.unwrap_or(defaults.rank),
                    max_iters: args.max_iters,
                    tol: args.tol,
                    seed: args.seed,
                },
                n_runs: args.runs,
                seed: args.seed,
                out_dir: None,
            }
        }
    };
    cfg.out_dir = Some(args.out.clone());
    cfg.validate()?;
    Ok(cfg)
}

fn gen_feeder(args: &GenFeederArgs) -> Result<()> {
    let spec = FeederSpec::new(args.buses, args.seed)
        .with_time_steps(args.time_steps)
        .three_phase(args.three_phase);
    let f = generate_radial_feeder(&spec)?;
    let part = if args.areas <= 1 {
        AreaPartition::single(f.network.n_phases())?
    } else {
        AreaPartition::contiguous(&f.network, args.areas)?
    };
    let manifest = write_network(&args.out, &f.network, &f.loads, &part)?;
    println!("{}", manifest.display());
    Ok(())
}

fn load(net: &NetworkArgs, seed: u64) -> Result<(gridmc::gridmodel::NetworkModel, gridmc::gridmodel::LoadScenario, AreaPartition)> {
    let (network, loads, shipped) = match &net.manifest {
        Some(path) => {
            let (n, l, p) = load_network(path)?;
            (n, l, Some(p))
        }
        None => {
            let spec = FeederSpec::new(net.buses, net.network_seed.unwrap_or(seed))
                .with_time_steps(net.time_steps)
                .three_phase(net.three_phase);
            let f = generate_radial_feeder(&spec)?;
            (f.network, f.loads, None)
        }
    };
    let part = match (net.areas, shipped) {
        (0, Some(p)) => p,
        (0, None) => bail!("--areas 0 needs a --manifest"),
        (1, _) => AreaPartition::single(network.n_phases())?,
        (k, _) => AreaPartition::contiguous(&network, k)?,
    };
    let loads = loads.truncated(net.time_steps)?;
    Ok((network, loads, part))
}

fn build_model(args: &BuildModelArgs) -> Result<()> {
    let (network, _, part) = load(&args.network, args.seed)?;
    let model = build_linear_model(&network, args.network.time_steps)?;
    let truncated = truncate_model(&model, &part)?;
    let err = truncation_error(&model, truncated.linear())?;
    let summary = serde_json::json!({
        "n_phases": model.n_phases(),
        "time_steps": model.time_steps(),
        "n_areas": part.n_areas(),
        "truncation_error": err,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let w = model.w(0);
        mtx::write_complex(&dir.join("w.mtx"), &gridmc::gridmodel::CMatrix::from_column_slice(w.len(), 1, w.as_slice()))?;
        mtx::write_complex(&dir.join("n.mtx"), model.n(0))?;
        fs::write(dir.join("model.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    }
    Ok(())
}

fn run(args: &ExperimentArgs) -> Result<()> {
    let cfg = experiment_config(args)?;
    let res = run_experiment(&cfg)?;
    let e = &res.payload.estimate;
    println!(
        "MAPE {:.4}%  angle MAE {:.4}°  RMSE {:.3e}  ({} run(s), {} area(s)) -> {}",
        e.mape_magnitude,
        e.mae_angle,
        e.rmse,
        e.n_runs,
        res.payload.n_areas,
        args.out.display()
    );
    Ok(())
}

fn run_sweep(args: &SweepArgs) -> Result<()> {
    let cfg = experiment_config(&args.experiment)?;
    let report = sweep(&cfg, args.param, &args.values)?;
    let out = &args.experiment.out;
    fs::create_dir_all(out)?;
    fs::write(out.join("sweep.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    w.write_record(["value", "mape", "mae_angle", "rmse", "mape_ci95", "mae_ci95"])?;
    for p in &report.points {
        let e = &p.estimate;
        let (a, b) = e.ci95.as_ref().map_or((String::new(), String::new()), |c| {
            (c.mape_magnitude.to_string(), c.mae_angle.to_string())
        });
        w.write_record([p.value.to_string(), e.mape_magnitude.to_string(), e.mae_angle.to_string(), e.rmse.to_string(), a, b])?;
    }
    w.flush()?;
    for p in &report.points {
        println!("{:>8} MAPE {:.4}%  MAE {:.4}°", p.value, p.estimate.mape_magnitude, p.estimate.mae_angle);
    }
    println!("MAPE trend nonincreasing after smoothing: {}", report.mape_trend_nonincreasing);
    Ok(())
}

fn certify(args: &CertifyArgs) -> Result<()> {
    let mut cfg = experiment_config(&args.experiment)?;
    let out = cfg.out_dir.take().unwrap_or_default();
    let mut res = execute(&cfg, Schedule::InOrder)?;
    let mut attempts = 0;
    while args.shrink_mu && !res.payload.runs.iter().all(|r| r.certificate.theorem1_pass) {
        attempts += 1;
        if attempts > 40 {
            bail!("spectral condition still fails at mu = {}", cfg.admm.mu);
        }
        cfg.admm.mu /= 2.0;
        res = execute(&cfg, Schedule::InOrder)?;
    }
    write_outputs(&out, &res)?;
    let reports: Vec<_> = res.payload.runs.iter().map(|r| &r.certificate).collect();
    let path = out.join("certificate.json");
    fs::write(&path, serde_json::to_string_pretty(&reports)? + "\n")?;
    for (k, c) in reports.iter().enumerate() {
        println!(
            "run {k}: mu {} ‖G‖₂ {:.4} theorem1 {} ‖∇U‖ {:.2e} ‖∇V‖ {:.2e} slackness {:.2e}",
            c.mu, c.spectral_norm, c.theorem1_pass, c.grad_u_norm, c.grad_v_norm, c.comp_slack_residual
        );
    }
    Ok(())
}

fn write_spectrum(sv: &[f64], out: Option<&Path>) -> Result<()> {
    let sink: Box<dyn std::io::Write> = match out {
        Some(p) => Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["index", "sigma"])?;
    for (i, s) in sv.iter().enumerate() {
        w.write_record([(i + 1).to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn spectrum(args: &SpectrumArgs) -> Result<()> {
    let sv = match &args.matrix {
        Some(path) => sv_spectrum(&read_matrix_csv(path)?),
        None => {
            let (network, loads, _) = load(&NetworkArgs { areas: 1, ..args.network.clone() }, args.seed)?;
            let v = solve_scenario(&network, &loads)?;
            sv_spectrum(build_matrix(&v, loads.matrix())?.data())
        }
    };
    write_spectrum(&sv, args.out.as_deref())?;
    if args.out.is_some() {
        for k in [1, 3, 5] {
            println!("energy in top {k}: {:.6}", energy_fraction(&sv, k));
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenFeeder(a) => gen_feeder(&a),
        Command::BuildModel(a) => build_model(&a),
        Command::Run(a) => run(&a),
        Command::Sweep(a) => run_sweep(&a),
        Command::Certify(a) => certify(&a),
        Command::Spectrum(a) => spectrum(&a),
    }
}
