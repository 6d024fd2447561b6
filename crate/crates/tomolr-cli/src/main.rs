//! Command line front end: simulate measurement records, estimate states,
//! tune the ridge gain, and run Monte-Carlo sweeps.
//!
//! Exit codes: 0 success, 2 bad input or configuration, 3 numerical failure
//! (rank-deficient system, degenerate probabilities, and the like).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use tomolr::estimators::{estimate_from_record, EstimatorKind};
use tomolr::experiments::{emit, run_experiment, ExperimentConfig, Scenario};
use tomolr::linalg::{decompose, CMat, DensityMatrix, HermitianBasis, C64};
use tomolr::measurement::{
    design_matrix, probabilities, sample_collective, sample_separate, weight_matrix_empirical,
    MeasurementRecord, Povm, Weight,
};
use tomolr::tuning::{tune_gamma_u, GammaSearch};

#[derive(Parser)]
#[command(
    name = "tomolr",
    version,
    about = "Quantum state tomography by constrained and regularized linear regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate measurement counts for a state under a POVM.
    Simulate(SimulateArgs),
    /// Recover state coordinates from a measurement record.
    Estimate(EstimateArgs),
    /// Pick the ridge gain from data by unbiased-cost minimization.
    Tune(TuneArgs),
    /// Run a Monte-Carlo sweep from a config file or a named preset.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScenarioName {
    Werner36,
    WernerCrls,
    SixQubitUnder,
    PauliUnder,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Separate,
    Collective,
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in scenario supplying both the state and the POVM.
    #[arg(long, value_enum, conflicts_with_all = ["povm", "state"])]
    scenario: Option<ScenarioName>,
    /// State-family parameter (q or p) for --scenario.
    #[arg(long, default_value_t = 0.5)]
    param: f64,
    /// Qubit count for the pauli-under scenario.
    #[arg(long, default_value_t = 3)]
    num_qubits: usize,
    /// Projector count for the random-Pauli scenarios.
    #[arg(long)]
    num_projectors: Option<usize>,
    /// POVM JSON file (pair with --state).
    #[arg(long, requires = "state")]
    povm: Option<PathBuf>,
    /// Density matrix JSON file: {"dim": d, "matrix": [[[re, im], ...], ...]}.
    #[arg(long, requires = "povm")]
    state: Option<PathBuf>,
    /// Copies measured (per outcome in separate mode, total in collective).
    #[arg(long)]
    n: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Separate)]
    mode: ModeArg,
    /// Where to write the measurement record JSON.
    #[arg(long)]
    out: PathBuf,
    /// Also write the POVM JSON (useful with --scenario).
    #[arg(long)]
    emit_povm: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Measurement record JSON.
    #[arg(long)]
    record: PathBuf,
    /// POVM JSON.
    #[arg(long)]
    povm: PathBuf,
    /// Estimator kind: LS, WLS, AWLS, CLS, CWLS, RWLS, CRWLS, CRLS.
    #[arg(long)]
    kind: String,
    /// Ridge gain for the regularized kinds.
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    #[arg(long, default_value_t = tomolr::tol::EPS_CLAMP)]
    eps_clamp: f64,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    /// Measurement record JSON.
    #[arg(long)]
    record: PathBuf,
    /// POVM JSON.
    #[arg(long)]
    povm: PathBuf,
    /// Constrained ridge kind to tune: CRWLS or CRLS.
    #[arg(long, default_value = "CRWLS")]
    kind: String,
    #[arg(long, default_value_t = tomolr::tol::EPS_CLAMP)]
    eps_clamp: f64,
    /// Criterion-curve CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config JSON file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in sweep preset.
    #[arg(long, value_enum)]
    preset: Option<ScenarioName>,
    /// Qubit count for the pauli-under preset.
    #[arg(long, default_value_t = 3)]
    num_qubits: usize,
    /// Projector count for the random-Pauli presets.
    #[arg(long)]
    num_projectors: Option<usize>,
    /// Override the number of Monte-Carlo rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// Override the state-parameter grid, comma separated (e.g. 0.2,0.5).
    #[arg(long)]
    params: Option<String>,
    /// Override the sample-size list, comma separated (e.g. 110,1100).
    #[arg(long)]
    n_list: Option<String>,
    /// Override the root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Carry per-round seeds, errors, and tuned gains in the JSON mirror.
    #[arg(long)]
    full: bool,
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    let run = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Tune(args) => cmd_tune(args),
        Command::Experiment(args) => cmd_experiment(args),
    };
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = match err.downcast_ref::<tomolr::Error>() {
                Some(e) if e.is_numerical() => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

/// TOMOLR_THREADS caps the rayon pool; unset or invalid leaves the default.
fn init_threads() {
    if let Ok(raw) = std::env::var("TOMOLR_THREADS") {
        if let Ok(k) = raw.trim().parse::<usize>() {
            if k >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
            }
        }
    }
}

fn scenario_from_name(
    name: ScenarioName,
    num_qubits: usize,
    num_projectors: Option<usize>,
) -> Scenario {
    match name {
        ScenarioName::Werner36 => Scenario::Werner36,
        ScenarioName::WernerCrls => Scenario::WernerCrls,
        ScenarioName::SixQubitUnder => Scenario::SixQubitUnder {
            num_projectors: num_projectors.unwrap_or(200),
        },
        ScenarioName::PauliUnder => Scenario::PauliUnder {
            num_qubits,
            num_projectors: num_projectors.unwrap_or(40),
        },
    }
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Deserialize)]
struct StateJson {
    dim: usize,
    matrix: Vec<Vec<[f64; 2]>>,
}

fn load_state(path: &Path) -> anyhow::Result<DensityMatrix> {
    let doc: StateJson = serde_json::from_str(&read_text(path)?)
        .with_context(|| format!("parsing state file {}", path.display()))?;
    if doc.matrix.len() != doc.dim || doc.matrix.iter().any(|row| row.len() != doc.dim) {
        bail!("state file {}: matrix is not {} x {}", path.display(), doc.dim, doc.dim);
    }
    let m = CMat::from_fn(doc.dim, doc.dim, |i, j| {
        C64::new(doc.matrix[i][j][0], doc.matrix[i][j][1])
    });
    Ok(DensityMatrix::new(m)?)
}

/// The Pauli basis matching a POVM's Hilbert-space dimension.
fn basis_for_dim(dim: usize) -> anyhow::Result<HermitianBasis> {
    if !dim.is_power_of_two() {
        bail!("POVM dimension {dim} is not a power of two; no qubit basis matches");
    }
    Ok(HermitianBasis::pauli(dim.trailing_zeros() as usize)?)
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let (rho, povm, basis) = match (&args.scenario, &args.povm, &args.state) {
        (Some(name), None, None) => {
            let scenario = scenario_from_name(*name, args.num_qubits, args.num_projectors);
            let parts = scenario.parts(args.seed)?;
            let rho = scenario.state(args.param)?;
            (rho, parts.povm, parts.basis)
        }
        (None, Some(povm_path), Some(state_path)) => {
            let povm = Povm::from_json(&read_text(povm_path)?)?;
            let rho = load_state(state_path)?;
            let basis = basis_for_dim(povm.dim())?;
            (rho, povm, basis)
        }
        _ => bail!("pass either --scenario or both --povm and --state"),
    };
    let a = design_matrix(&povm, &basis)?;
    let theta = decompose(&rho, &basis)?;
    let (p, _) = probabilities(&a, &theta)?;
    let record = match args.mode {
        ModeArg::Separate => sample_separate(&p, args.n, args.seed)?,
        ModeArg::Collective => sample_collective(&p, args.n, args.seed)?,
    };
    write_text(&args.out, &record.to_json())?;
    println!("wrote {}", args.out.display());
    if let Some(povm_path) = &args.emit_povm {
        write_text(povm_path, &povm.to_json())?;
        println!("wrote {}", povm_path.display());
    }
    Ok(())
}

fn cmd_estimate(args: EstimateArgs) -> anyhow::Result<()> {
    let povm = Povm::from_json(&read_text(&args.povm)?)?;
    let record = MeasurementRecord::from_json(&read_text(&args.record)?)?;
    let basis = basis_for_dim(povm.dim())?;
    let a = design_matrix(&povm, &basis)?;
    let kind = EstimatorKind::parse(&args.kind)?;
    let report = estimate_from_record(
        kind,
        &a,
        basis.trace_vector(),
        &record,
        args.gamma,
        args.eps_clamp,
    )?;
    let json = report.to_json();
    match &args.out {
        Some(path) => {
            write_text(path, &json)?;
            println!("wrote {}", path.display());
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_tune(args: TuneArgs) -> anyhow::Result<()> {
    let kind = EstimatorKind::parse(&args.kind)?;
    if !(kind.regularized() && kind.constrained()) {
        bail!("gain tuning applies to the constrained ridge kinds (CRWLS, CRLS), not {kind}");
    }
    let povm = Povm::from_json(&read_text(&args.povm)?)?;
    let record = MeasurementRecord::from_json(&read_text(&args.record)?)?;
    let basis = basis_for_dim(povm.dim())?;
    let a = design_matrix(&povm, &basis)?;
    let w_data = Weight::Diag(weight_matrix_empirical(&record, args.eps_clamp));
    let w_est = if kind.weighted() { w_data.clone() } else { Weight::Identity };
    let curve = tune_gamma_u(
        &a,
        basis.trace_vector(),
        &record.frequencies,
        &w_data,
        &w_est,
        record.n,
        &GammaSearch::default(),
    )?;
    match &args.out {
        Some(path) => {
            write_text(path, &curve.to_csv())?;
            println!("wrote {}", path.display());
            println!("{}", curve.summary_json());
        }
        None => print!("{}", curve.to_csv()),
    }
    Ok(())
}

fn parse_f64_list(raw: &str) -> anyhow::Result<Vec<f64>> {
    raw.split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("parsing number {s:?}")))
        .collect()
}

fn parse_u64_list(raw: &str) -> anyhow::Result<Vec<u64>> {
    raw.split(',')
        .map(|s| s.trim().parse::<u64>().with_context(|| format!("parsing integer {s:?}")))
        .collect()
}

fn cmd_experiment(args: ExperimentArgs) -> anyhow::Result<()> {
    let mut config = match (&args.config, &args.preset) {
        (Some(path), None) => {
            let text = read_text(path)?;
            serde_json::from_str::<ExperimentConfig>(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        (None, Some(name)) => {
            let scenario = scenario_from_name(*name, args.num_qubits, args.num_projectors);
            let out_dir = args.out_dir.clone().unwrap_or_else(|| PathBuf::from("tomolr-out"));
            ExperimentConfig::preset(scenario, out_dir)
        }
        _ => bail!("pass exactly one of --config or --preset"),
    };
    if let Some(rounds) = args.rounds {
        config.rounds = rounds;
    }
    if let Some(raw) = &args.params {
        config.state_params = parse_f64_list(raw)?;
    }
    if let Some(raw) = &args.n_list {
        config.n_list = parse_u64_list(raw)?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(dir) = &args.out_dir {
        config.output_dir = dir.clone();
    }
    if args.full {
        config.full_output = true;
    }
    let result = run_experiment(&config)?;
    let files = emit(&result, &config.output_dir)?;
    let failed = result.cells.iter().filter(|c| c.error.is_some()).count();
    println!(
        "{} cells ({} with recorded errors), {} rounds each",
        result.cells.len(),
        failed,
        config.rounds
    );
    for file in files {
        println!("wrote {}", file.display());
    }
    Ok(())
}
