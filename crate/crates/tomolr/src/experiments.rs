//! Benchmark scenarios, a Monte-Carlo driver, and file emission.
//!
//! A scenario fixes the POVM, the operator basis, and a one-parameter state
//! family. The driver sweeps (state parameter, sample size, estimator,
//! gain) cells, runs seeded rounds of sample-then-estimate in parallel, and
//! compares the experimental squared error against the analytic MSE trace
//! computed with the true probabilities. Output is a flat CSV plus a JSON
//! mirror that can carry per-round detail.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::estimators::{
    cwls, estimate_from_record, mse_trace, rwls, wls, crwls, EstimateReport, EstimatorKind,
    RegressionProblem,
};
use crate::linalg::{
    c, decompose, CMat, DensityMatrix, HermitianBasis, HermitianOperator, RVec, ThetaVector,
    MAX_QUBITS,
};
use crate::measurement::{
    design_matrix, pauli_projector_povm, probabilities, sample_collective, sample_separate,
    weight_matrix_true, DesignMatrix, MeasurementRecord, Mode, Povm, Weight,
};
use crate::tuning::{tune_gamma_r, tune_gamma_u, GammaSearch};
use crate::{seed, Error, Result};

/// One-parameter benchmark families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Scenario {
    /// Two-qubit Werner family measured by the 36-outcome product POVM.
    Werner36,
    /// Same family and POVM, intended for the unweighted constrained ridge
    /// estimator; kept as its own label so config files state their intent.
    WernerCrls,
    /// Six-qubit rank-3 family under randomly chosen Pauli projectors
    /// (under-determinate design).
    SixQubitUnder {
        #[serde(default = "default_six_qubit_projectors")]
        num_projectors: usize,
    },
    /// Reduced-scale version of the under-determinate family for arbitrary
    /// qubit counts >= 3.
    PauliUnder { num_qubits: usize, num_projectors: usize },
}

fn default_six_qubit_projectors() -> usize {
    200
}

impl Scenario {
    pub fn num_qubits(&self) -> usize {
        match self {
            Scenario::Werner36 | Scenario::WernerCrls => 2,
            Scenario::SixQubitUnder { .. } => 6,
            Scenario::PauliUnder { num_qubits, .. } => *num_qubits,
        }
    }

    /// The POVM, basis, and design matrix shared by every grid cell.
    pub fn parts(&self, seed: u64) -> Result<ScenarioParts> {
        let basis = HermitianBasis::pauli(self.num_qubits())?;
        let povm = match self {
            Scenario::Werner36 | Scenario::WernerCrls => werner36_povm()?,
            Scenario::SixQubitUnder { num_projectors } => {
                pauli_projector_povm(6, *num_projectors, seed)?
            }
            Scenario::PauliUnder { num_qubits, num_projectors } => {
                pauli_projector_povm(*num_qubits, *num_projectors, seed)?
            }
        };
        let a = design_matrix(&povm, &basis)?;
        Ok(ScenarioParts { basis, povm, a })
    }

    /// The state at one grid value of the family parameter.
    pub fn state(&self, param: f64) -> Result<DensityMatrix> {
        match self {
            Scenario::Werner36 | Scenario::WernerCrls => werner_state(param),
            Scenario::SixQubitUnder { .. } => rank3_state(6, param),
            Scenario::PauliUnder { num_qubits, .. } => rank3_state(*num_qubits, param),
        }
    }
}

/// Scenario pieces that do not depend on the state parameter.
pub struct ScenarioParts {
    pub basis: HermitianBasis,
    pub povm: Povm,
    pub a: DesignMatrix,
}

/// The six single-qubit unit-sum vectors behind the 36-outcome POVM.
fn six_qubit_effect_kets() -> [DVector<Complex64>; 6] {
    let s6 = 1.0 / 6f64.sqrt();
    let s3 = 1.0 / 3f64.sqrt();
    [
        DVector::from_vec(vec![c(s6, 0.0), c(s6, 0.0)]),
        DVector::from_vec(vec![c(s6, 0.0), c(-s6, 0.0)]),
        DVector::from_vec(vec![c(s6, 0.0), c(0.0, s6)]),
        DVector::from_vec(vec![c(s6, 0.0), c(0.0, -s6)]),
        DVector::from_vec(vec![c(s3, 0.0), c(0.0, 0.0)]),
        DVector::from_vec(vec![c(0.0, 0.0), c(s3, 0.0)]),
    ]
}

/// The 36-effect two-qubit product POVM: E_{jk} = phi_j phi_j^* (x)
/// phi_k phi_k^*. The scaled vectors make each single-qubit six-pack sum to
/// the identity, so the product set is complete.
pub fn werner36_povm() -> Result<Povm> {
    let kets = six_qubit_effect_kets();
    let singles: Vec<CMat> = kets.iter().map(|v| v * v.adjoint()).collect();
    let mut effects = Vec::with_capacity(36);
    for ej in &singles {
        for ek in &singles {
            effects.push(HermitianOperator::new(ej.kronecker(ek))?);
        }
    }
    Povm::new(effects, true)
}

/// rho_q = q |psi><psi| + (1 - q) I/4 with the singlet psi = (|01> - |10>)/sqrt(2).
pub fn werner_state(q: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("q = {q} must lie in [0, 1]")));
    }
    let amp = 1.0 / 2f64.sqrt();
    let mut ket = DVector::from_element(4, c(0.0, 0.0));
    ket[1] = c(amp, 0.0);
    ket[2] = c(-amp, 0.0);
    let m = (&ket * ket.adjoint()) * c(q, 0.0) + CMat::identity(4, 4) * c((1.0 - q) / 4.0, 0.0);
    DensityMatrix::new(m)
}

/// Two-qubit Werner family with its 36-outcome POVM and Pauli basis.
pub fn scenario_werner36(q: f64) -> Result<(DensityMatrix, Povm, HermitianBasis)> {
    Ok((werner_state(q)?, werner36_povm()?, HermitianBasis::pauli(2)?))
}

/// Equal mixture of three orthogonal pure states conjugated by u^(x)q,
/// where u = [[sqrt(3)/2, 1/2], [-i/2, sqrt(3)/2 i]]. The defining basis
/// indices 42, 8, 59, 30 (1-based, for six qubits) fold into smaller
/// registers as ((i - 1) mod d) + 1.
pub fn rank3_state(num_qubits: usize, p: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("p = {p} must lie in [0, 1]")));
    }
    if !(3..=MAX_QUBITS).contains(&num_qubits) {
        return Err(Error::InvalidArgument(format!(
            "rank-3 family needs 3..={MAX_QUBITS} qubits, got {num_qubits}"
        )));
    }
    let d = 1usize << num_qubits;
    let fold = |i: usize| (i - 1) % d;
    let idx = [fold(42), fold(8), fold(59), fold(30)];
    let mut sorted = idx;
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(format!(
            "folded support indices collide at {num_qubits} qubits"
        )));
    }

    let mut psi1 = DVector::from_element(d, c(0.0, 0.0));
    psi1[idx[0]] = c(p.sqrt(), 0.0);
    psi1[idx[1]] = c((1.0 - p).sqrt(), 0.0);
    let mut psi2 = DVector::from_element(d, c(0.0, 0.0));
    psi2[idx[2]] = c(1.0, 0.0);
    let mut psi3 = DVector::from_element(d, c(0.0, 0.0));
    psi3[idx[3]] = c(1.0, 0.0);

    let third = c(1.0 / 3.0, 0.0);
    let mix = (&psi1 * psi1.adjoint() + &psi2 * psi2.adjoint() + &psi3 * psi3.adjoint()) * third;

    let r3 = 3f64.sqrt() / 2.0;
    let u1 = CMat::from_row_slice(2, 2, &[c(r3, 0.0), c(0.5, 0.0), c(0.0, -0.5), c(0.0, r3)]);
    let mut u = u1.clone();
    for _ in 1..num_qubits {
        u = u.kronecker(&u1);
    }
    DensityMatrix::new(u.adjoint() * mix * u)
}

/// Six-qubit rank-3 family with a random Pauli-projector POVM and the
/// six-qubit Pauli basis.
pub fn scenario_six_qubit(
    p: f64,
    num_projectors: usize,
    seed: u64,
) -> Result<(DensityMatrix, Povm, HermitianBasis)> {
    Ok((
        rank3_state(6, p)?,
        pauli_projector_povm(6, num_projectors, seed)?,
        HermitianBasis::pauli(6)?,
    ))
}

/// How the ridge gain is chosen for the regularized estimator kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", content = "gammas", rename_all = "snake_case")]
pub enum GammaPolicy {
    /// Sweep the listed gains, one grid cell per value.
    Fixed(Vec<f64>),
    /// Exact-risk minimizer computed once per cell from the true state and
    /// true weights (deterministic).
    TuneR,
    /// Unbiased-cost minimizer computed from each round's data.
    TuneU,
    /// Midpoint of the guaranteed-improvement window
    /// (0, 2/(|theta|^2 - 1/|t|^2)), from the true state.
    WindowMidpoint,
}

fn default_eps_clamp() -> f64 {
    crate::tol::EPS_CLAMP
}

fn default_mode() -> Mode {
    Mode::Separate
}

/// Full description of one experiment sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// Grid of the state-family parameter (q or p).
    pub state_params: Vec<f64>,
    pub n_list: Vec<u64>,
    pub rounds: usize,
    pub estimators: Vec<EstimatorKind>,
    pub gamma_policy: GammaPolicy,
    pub seed: u64,
    #[serde(default = "default_eps_clamp")]
    pub eps_clamp: f64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// Give weighted estimators the true inverse-variance weight instead of
    /// the clamped empirical one (formula-validation runs).
    #[serde(default)]
    pub use_true_weights: bool,
    pub output_dir: PathBuf,
    /// Carry per-round seeds, squared errors, and tuned gains in the JSON
    /// mirror.
    #[serde(default)]
    pub full_output: bool,
}

impl ExperimentConfig {
    /// Validate grid shapes and policy/estimator compatibility.
    pub fn check(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if self.state_params.is_empty() {
            return Err(Error::Config("state_params must be nonempty".into()));
        }
        if let Some(bad) =
            self.state_params.iter().find(|v| !v.is_finite() || !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Config(format!("state parameter {bad} outside [0, 1]")));
        }
        if self.n_list.is_empty() {
            return Err(Error::Config("n_list must be nonempty".into()));
        }
        if self.n_list.iter().any(|&n| n == 0) {
            return Err(Error::Config("sample sizes must be >= 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("estimators must be nonempty".into()));
        }
        if !(self.eps_clamp > 0.0 && self.eps_clamp < 0.5) {
            return Err(Error::Config(format!(
                "eps_clamp = {} must lie in (0, 0.5)",
                self.eps_clamp
            )));
        }
        let has_regularized = self.estimators.iter().any(|k| k.regularized());
        match &self.gamma_policy {
            GammaPolicy::Fixed(gammas) => {
                if has_regularized && gammas.is_empty() {
                    return Err(Error::Config(
                        "fixed gamma list must be nonempty when a regularized estimator runs"
                            .into(),
                    ));
                }
                if let Some(bad) = gammas.iter().find(|g| !g.is_finite() || **g < 0.0) {
                    return Err(Error::Config(format!("gamma = {bad} must be finite and >= 0")));
                }
            }
            GammaPolicy::TuneR | GammaPolicy::TuneU | GammaPolicy::WindowMidpoint => {
                if let Some(bad) =
                    self.estimators.iter().find(|k| k.regularized() && !k.constrained())
                {
                    return Err(Error::Config(format!(
                        "gain tuning applies to the constrained ridge kinds, not {bad}"
                    )));
                }
            }
        }
        match &self.scenario {
            Scenario::PauliUnder { num_qubits, num_projectors } => {
                if !(3..=6).contains(num_qubits) {
                    return Err(Error::Config(format!(
                        "pauli_under supports 3..=6 qubits, got {num_qubits}"
                    )));
                }
                if *num_projectors == 0 {
                    return Err(Error::Config("num_projectors must be >= 1".into()));
                }
            }
            Scenario::SixQubitUnder { num_projectors } => {
                if *num_projectors == 0 {
                    return Err(Error::Config("num_projectors must be >= 1".into()));
                }
            }
            _ => {}
        }
        if self.mode == Mode::Collective
            && !matches!(self.scenario, Scenario::Werner36 | Scenario::WernerCrls)
        {
            return Err(Error::Config(
                "collective sampling needs a complete POVM; this scenario's is not".into(),
            ));
        }
        Ok(())
    }

    /// Paper-scale default sweep for a scenario.
    pub fn preset(scenario: Scenario, output_dir: PathBuf) -> Self {
        let tenths: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let (state_params, n_list, estimators, gamma_policy, rounds) = match &scenario {
            Scenario::Werner36 => (
                tenths,
                vec![110, 1_100, 11_000],
                vec![
                    EstimatorKind::Ls,
                    EstimatorKind::Awls,
                    EstimatorKind::Cwls,
                    EstimatorKind::Crwls,
                ],
                GammaPolicy::TuneU,
                1_000,
            ),
            Scenario::WernerCrls => (
                tenths,
                vec![110, 1_100, 11_000],
                vec![EstimatorKind::Crls],
                GammaPolicy::TuneU,
                1_000,
            ),
            Scenario::SixQubitUnder { .. } => (
                tenths,
                vec![1_100, 11_000, 110_000],
                vec![EstimatorKind::Crwls],
                GammaPolicy::Fixed(vec![1.0, 10.0, 100.0, 1000.0]),
                1_000,
            ),
            Scenario::PauliUnder { .. } => (
                tenths,
                vec![1_100],
                vec![EstimatorKind::Crwls],
                GammaPolicy::Fixed(vec![1.0, 10.0, 100.0]),
                200,
            ),
        };
        Self {
            scenario,
            state_params,
            n_list,
            rounds,
            estimators,
            gamma_policy,
            seed: 42,
            eps_clamp: default_eps_clamp(),
            mode: default_mode(),
            use_true_weights: false,
            output_dir,
            full_output: false,
        }
    }
}

/// Midpoint of the gain window on which the constrained ridge estimator is
/// guaranteed to improve on the constrained unregularized one:
/// gamma = 1 / (|theta|^2 - 1/|t|^2).
pub fn window_midpoint_gamma(theta: &ThetaVector, trace_vector: &RVec) -> Result<f64> {
    let denom = theta.coords.norm_squared() - 1.0 / trace_vector.norm_squared();
    if denom <= 1e-12 {
        return Err(Error::DegenerateState(
            "the improvement window is empty for the maximally mixed state".into(),
        ));
    }
    Ok(1.0 / denom)
}

/// Gain handling for one grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
enum GammaSpec {
    Unregularized,
    Fixed(f64),
    TuneR,
    TuneU,
    WindowMidpoint,
}

fn cell_specs(kind: EstimatorKind, policy: &GammaPolicy) -> Vec<GammaSpec> {
    if !kind.regularized() {
        return vec![GammaSpec::Unregularized];
    }
    match policy {
        GammaPolicy::Fixed(gammas) => gammas.iter().map(|&g| GammaSpec::Fixed(g)).collect(),
        GammaPolicy::TuneR => vec![GammaSpec::TuneR],
        GammaPolicy::TuneU => vec![GammaSpec::TuneU],
        GammaPolicy::WindowMidpoint => vec![GammaSpec::WindowMidpoint],
    }
}

/// Per-round detail carried by the JSON mirror when `full_output` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundsDetail {
    pub seeds: Vec<u64>,
    pub sq_errors: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gamma_hats: Vec<f64>,
}

/// One (state parameter, n, estimator, gain) cell of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub state_param: f64,
    pub n: u64,
    pub estimator: EstimatorKind,
    /// The gain the estimator ran with, when it is one deterministic value
    /// (fixed sweeps, exact-risk tuning, window midpoint).
    pub gamma: Option<f64>,
    /// Mean over rounds of |theta_hat - theta|^2.
    pub mse_exp: Option<f64>,
    /// Trace of the analytic MSE matrix at the true probabilities and true
    /// weight; for data-tuned gains, evaluated at the median tuned gain.
    pub mse_theory: Option<f64>,
    /// Median tuned gain (exact-risk tuning reports its single value here
    /// too, leaving `gamma` to the policies that fix the gain a priori).
    pub gamma_hat_median: Option<f64>,
    pub clamp_total: u64,
    pub wall_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds_detail: Option<RoundsDetail>,
}

/// A finished sweep: the config that produced it plus one row per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub cells: Vec<CellResult>,
}

const CSV_HEADER: &str = "state_param,n,estimator,gamma,mse_exp,mse_theory,gamma_hat_median,clamp_total";

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl ExperimentResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for cell in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                cell.state_param,
                cell.n,
                cell.estimator.as_str(),
                opt_f64(cell.gamma),
                opt_f64(cell.mse_exp),
                opt_f64(cell.mse_theory),
                opt_f64(cell.gamma_hat_median),
                cell.clamp_total,
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("experiment result serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("experiment JSON: {e}")))
    }
}

/// Write `result.csv` and `result.json` into `dir`, creating it if needed.
pub fn emit(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    let io_err = |path: &Path, source: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let csv_path = dir.join("result.csv");
    std::fs::write(&csv_path, result.to_csv()).map_err(|e| io_err(&csv_path, e))?;
    let json_path = dir.join("result.json");
    std::fs::write(&json_path, result.to_json()).map_err(|e| io_err(&json_path, e))?;
    Ok(vec![csv_path, json_path])
}

/// Load a JSON mirror back into a result.
pub fn load_result(path: &Path) -> Result<ExperimentResult> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ExperimentResult::from_json(&text)
}

struct CellInput<'a> {
    config: &'a ExperimentConfig,
    a: &'a DesignMatrix,
    trace_vector: &'a RVec,
    theta: &'a ThetaVector,
    p: &'a RVec,
    state_param: f64,
    n: u64,
    kind: EstimatorKind,
    spec: GammaSpec,
    cell_index: u64,
}

struct RoundOut {
    seed: u64,
    sq_error: f64,
    gamma_hat: Option<f64>,
    clamps: usize,
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    Some(if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) })
}

/// The weight the estimator map itself runs with during gain tuning.
fn tuning_map_weight(kind: EstimatorKind, data_weight: &Weight) -> Weight {
    if kind.weighted() {
        data_weight.clone()
    } else {
        Weight::Identity
    }
}

fn estimate_round(
    input: &CellInput,
    record: &MeasurementRecord,
    gamma: f64,
    true_weight: Option<&Weight>,
) -> Result<EstimateReport> {
    let kind = input.kind;
    match true_weight {
        Some(w) if kind.weighted() && kind != EstimatorKind::Awls => {
            let problem = RegressionProblem::new(input.a, input.trace_vector, &record.frequencies)
                .with_weight(w.clone())
                .with_gamma(if kind.regularized() { gamma } else { 0.0 });
            match kind {
                EstimatorKind::Wls => wls(&problem),
                EstimatorKind::Cwls => cwls(&problem),
                EstimatorKind::Rwls => rwls(&problem),
                EstimatorKind::Crwls => crwls(&problem),
                _ => unreachable!("non-weighted kinds never take the true-weight path"),
            }
        }
        _ => estimate_from_record(
            kind,
            input.a,
            input.trace_vector,
            record,
            gamma,
            input.config.eps_clamp,
        ),
    }
}

fn run_round(
    input: &CellInput,
    round: u64,
    fixed_gamma: Option<f64>,
    tune_per_round: bool,
    true_weight: Option<&Weight>,
    search: &GammaSearch,
) -> Result<RoundOut> {
    let round_seed = seed::derive(input.config.seed, input.cell_index, round);
    let record = match input.config.mode {
        Mode::Separate => sample_separate(input.p, input.n, round_seed)?,
        Mode::Collective => sample_collective(input.p, input.n, round_seed)?,
    };
    let gamma = if tune_per_round {
        let data_weight = match true_weight {
            Some(w) => w.clone(),
            None => Weight::Diag(crate::measurement::weight_matrix_empirical(
                &record,
                input.config.eps_clamp,
            )),
        };
        let w_est = tuning_map_weight(input.kind, &data_weight);
        let curve = tune_gamma_u(
            input.a,
            input.trace_vector,
            &record.frequencies,
            &data_weight,
            &w_est,
            input.n,
            search,
        )?;
        curve.minimizer
    } else {
        fixed_gamma.unwrap_or(0.0)
    };
    let report = estimate_round(input, &record, gamma, true_weight)?;
    let diff = &report.theta_hat.coords - &input.theta.coords;
    Ok(RoundOut {
        seed: round_seed,
        sq_error: diff.norm_squared(),
        gamma_hat: tune_per_round.then_some(gamma),
        clamps: report.diagnostics.clamp_count,
    })
}

fn run_cell(input: &CellInput) -> CellResult {
    let start = Instant::now();
    let search = GammaSearch::default();
    let mut cell = CellResult {
        state_param: input.state_param,
        n: input.n,
        estimator: input.kind,
        gamma: None,
        mse_exp: None,
        mse_theory: None,
        gamma_hat_median: None,
        clamp_total: 0,
        wall_ms: 0.0,
        error: None,
        rounds_detail: None,
    };
    let mut errors: Vec<String> = Vec::new();

    // The true inverse-variance weight, when the config asks estimators to
    // run with it. Failure (a zero-variance outcome) poisons the cell.
    let true_weight = if input.config.use_true_weights
        && input.kind.weighted()
        && input.kind != EstimatorKind::Awls
    {
        match weight_matrix_true(input.p, input.n) {
            Ok(w) => Some(Weight::Diag(w)),
            Err(e) => {
                cell.error = Some(format!("true weight: {e}"));
                cell.wall_ms = start.elapsed().as_secs_f64() * 1e3;
                return cell;
            }
        }
    } else {
        None
    };

    // Resolve the gain for policies that fix it once per cell.
    let mut tune_per_round = false;
    let fixed_gamma = match input.spec {
        GammaSpec::Unregularized => None,
        GammaSpec::Fixed(g) => Some(g),
        GammaSpec::WindowMidpoint => {
            match window_midpoint_gamma(input.theta, input.trace_vector) {
                Ok(g) => Some(g),
                Err(e) => {
                    cell.error = Some(format!("window midpoint: {e}"));
                    cell.wall_ms = start.elapsed().as_secs_f64() * 1e3;
                    return cell;
                }
            }
        }
        GammaSpec::TuneR => {
            let tuned = weight_matrix_true(input.p, input.n)
                .map(|w| Weight::Diag(w))
                .and_then(|w_risk| {
                    let w_est = tuning_map_weight(input.kind, &w_risk);
                    tune_gamma_r(
                        input.a,
                        input.trace_vector,
                        &input.theta.coords,
                        &w_risk,
                        &w_est,
                        input.n,
                        &search,
                    )
                });
            match tuned {
                Ok(curve) => Some(curve.minimizer),
                Err(e) => {
                    cell.error = Some(format!("risk tuning: {e}"));
                    cell.wall_ms = start.elapsed().as_secs_f64() * 1e3;
                    return cell;
                }
            }
        }
        GammaSpec::TuneU => {
            tune_per_round = true;
            None
        }
    };

    let outcomes: Vec<Result<RoundOut>> = (0..input.config.rounds as u64)
        .into_par_iter()
        .map(|round| {
            run_round(input, round, fixed_gamma, tune_per_round, true_weight.as_ref(), &search)
        })
        .collect();

    // Fixed-order reduce keeps the sums bitwise deterministic regardless of
    // the thread count.
    let mut sum_sq = 0.0f64;
    let mut done = 0usize;
    let mut seeds = Vec::with_capacity(outcomes.len());
    let mut sq_errors = Vec::with_capacity(outcomes.len());
    let mut gamma_hats = Vec::new();
    for (round, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(r) => {
                sum_sq += r.sq_error;
                cell.clamp_total += r.clamps as u64;
                seeds.push(r.seed);
                sq_errors.push(r.sq_error);
                if let Some(g) = r.gamma_hat {
                    gamma_hats.push(g);
                }
                done += 1;
            }
            Err(e) => {
                if errors.len() < 3 {
                    errors.push(format!("round {round}: {e}"));
                }
            }
        }
    }

    if done == input.config.rounds {
        cell.mse_exp = Some(sum_sq / input.config.rounds as f64);
    }
    cell.gamma = match input.spec {
        GammaSpec::Fixed(_) | GammaSpec::WindowMidpoint => fixed_gamma,
        _ => None,
    };
    cell.gamma_hat_median = match input.spec {
        GammaSpec::TuneR => fixed_gamma,
        GammaSpec::TuneU => median(&gamma_hats),
        _ => None,
    };

    // Analytic reference at the cell's gain (median gain for the data-tuned
    // policy); needs the true weight, so it can fail independently of the
    // sampling loop.
    let theory_gamma = match input.spec {
        GammaSpec::Unregularized => Some(0.0),
        GammaSpec::Fixed(_) | GammaSpec::WindowMidpoint | GammaSpec::TuneR => fixed_gamma,
        GammaSpec::TuneU => cell.gamma_hat_median,
    };
    if let Some(g) = theory_gamma {
        match mse_trace(
            input.kind,
            input.a,
            input.p,
            input.n,
            input.theta,
            input.trace_vector,
            g,
        ) {
            Ok(v) => cell.mse_theory = Some(v),
            Err(e) => errors.push(format!("analytic MSE: {e}")),
        }
    }

    if !errors.is_empty() {
        cell.error = Some(errors.join("; "));
    }
    if input.config.full_output {
        cell.rounds_detail = Some(RoundsDetail { seeds, sq_errors, gamma_hats });
    }
    cell.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    cell
}

/// Run the full sweep described by `config`. Cells never abort the sweep:
/// numerical failures are recorded in the cell's `error` field.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.check()?;
    let parts = config.scenario.parts(config.seed)?;
    let trace_vector = parts.basis.trace_vector().clone();
    let mut cells = Vec::new();
    let mut cell_index = 0u64;
    for &state_param in &config.state_params {
        let rho = config.scenario.state(state_param)?;
        let theta = decompose(&rho, &parts.basis)?;
        let (p, _) = probabilities(&parts.a, &theta)?;
        for &n in &config.n_list {
            for &kind in &config.estimators {
                for spec in cell_specs(kind, &config.gamma_policy) {
                    let input = CellInput {
                        config,
                        a: &parts.a,
                        trace_vector: &trace_vector,
                        theta: &theta,
                        p: &p,
                        state_param,
                        n,
                        kind,
                        spec,
                        cell_index,
                    };
                    cells.push(run_cell(&input));
                    cell_index += 1;
                }
            }
        }
    }
    Ok(ExperimentResult { config: config.clone(), cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn werner_povm_is_complete_and_design_has_full_rank() {
        let (rho, povm, basis) = scenario_werner36(0.3).unwrap();
        assert!(povm.complete());
        assert_eq!(povm.len(), 36);
        assert_eq!(rho.matrix().nrows(), 4);
        let a = design_matrix(&povm, &basis).unwrap();
        assert_eq!((a.num_outcomes(), a.num_coords()), (36, 16));
        assert!(a.rank_full());
    }

    #[test]
    fn werner_endpoints() {
        // q = 0: the maximally mixed state makes every outcome probability
        // Tr(E_m)/4.
        let (rho, povm, basis) = scenario_werner36(0.0).unwrap();
        let a = design_matrix(&povm, &basis).unwrap();
        let theta = decompose(&rho, &basis).unwrap();
        let (p, _) = probabilities(&a, &theta).unwrap();
        for (m, effect) in povm.effects().iter().enumerate() {
            assert_abs_diff_eq!(p[m], effect.trace() / 4.0, epsilon = 1e-12);
        }
        // q = 1: pure singlet.
        let (rho, _, _) = scenario_werner36(1.0).unwrap();
        let purity = (rho.matrix() * rho.matrix()).trace().re;
        assert_abs_diff_eq!(purity, 1.0, epsilon = 1e-12);
        assert!(werner_state(1.2).is_err());
    }

    #[test]
    fn rank3_state_spectrum_and_folding() {
        for &nq in &[3usize, 4, 6] {
            for &p in &[0.0, 0.5, 1.0] {
                let rho = rank3_state(nq, p).unwrap();
                let mut eigs = rho
                    .matrix()
                    .clone()
                    .symmetric_eigen()
                    .eigenvalues
                    .iter()
                    .copied()
                    .collect::<Vec<f64>>();
                eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
                assert_abs_diff_eq!(eigs[0], 1.0 / 3.0, epsilon = 1e-10);
                assert_abs_diff_eq!(eigs[2], 1.0 / 3.0, epsilon = 1e-10);
                assert!(eigs[2] > 1e-10);
                assert!(eigs[3].abs() < 1e-10);
                let trace: f64 = eigs.iter().sum();
                assert_abs_diff_eq!(trace, 1.0, epsilon = 1e-10);
            }
        }
        assert!(rank3_state(2, 0.5).is_err());
    }

    #[test]
    fn rank3_conjugation_is_unitary() {
        let r3 = 3f64.sqrt() / 2.0;
        let u = CMat::from_row_slice(2, 2, &[c(r3, 0.0), c(0.5, 0.0), c(0.0, -0.5), c(0.0, r3)]);
        let dev = (u.adjoint() * &u - CMat::identity(2, 2)).norm();
        assert!(dev < 1e-14, "u deviates from unitarity by {dev}");
    }

    #[test]
    fn window_midpoint_rejects_maximally_mixed() {
        let basis = HermitianBasis::pauli(2).unwrap();
        let t = basis.trace_vector().clone();
        let rho = DensityMatrix::maximally_mixed(4);
        let theta = decompose(&rho, &basis).unwrap();
        assert!(matches!(
            window_midpoint_gamma(&theta, &t),
            Err(Error::DegenerateState(_))
        ));
        let (rho, _, _) = scenario_werner36(0.6).unwrap();
        let theta = decompose(&rho, &basis).unwrap();
        let g = window_midpoint_gamma(&theta, &t).unwrap();
        assert!(g > 0.0 && g.is_finite());
    }

    fn smoke_config() -> ExperimentConfig {
        ExperimentConfig {
            scenario: Scenario::Werner36,
            state_params: vec![0.5],
            n_list: vec![200],
            rounds: 3,
            estimators: vec![EstimatorKind::Ls, EstimatorKind::Crwls],
            gamma_policy: GammaPolicy::Fixed(vec![0.5]),
            seed: 7,
            eps_clamp: crate::tol::EPS_CLAMP,
            mode: Mode::Separate,
            use_true_weights: false,
            output_dir: PathBuf::from("unused"),
            full_output: true,
        }
    }

    #[test]
    fn config_check_gates() {
        let mut cfg = smoke_config();
        cfg.rounds = 0;
        assert!(matches!(cfg.check(), Err(Error::Config(_))));
        let mut cfg = smoke_config();
        cfg.state_params = vec![1.5];
        assert!(matches!(cfg.check(), Err(Error::Config(_))));
        let mut cfg = smoke_config();
        cfg.gamma_policy = GammaPolicy::Fixed(vec![]);
        assert!(matches!(cfg.check(), Err(Error::Config(_))));
        let mut cfg = smoke_config();
        cfg.estimators = vec![EstimatorKind::Rwls];
        cfg.gamma_policy = GammaPolicy::TuneU;
        assert!(matches!(cfg.check(), Err(Error::Config(_))));
        let mut cfg = smoke_config();
        cfg.scenario = Scenario::PauliUnder { num_qubits: 3, num_projectors: 40 };
        cfg.mode = Mode::Collective;
        assert!(matches!(cfg.check(), Err(Error::Config(_))));
        assert!(smoke_config().check().is_ok());
    }

    #[test]
    fn smoke_sweep_fills_every_cell_and_repeats_bitwise() {
        let cfg = smoke_config();
        let result = run_experiment(&cfg).unwrap();
        assert_eq!(result.cells.len(), 2);
        for cell in &result.cells {
            assert!(cell.error.is_none(), "{:?}", cell.error);
            assert!(cell.mse_exp.unwrap() >= 0.0);
            assert!(cell.mse_theory.unwrap() > 0.0);
            let detail = cell.rounds_detail.as_ref().unwrap();
            assert_eq!(detail.seeds.len(), 3);
            assert_eq!(detail.sq_errors.len(), 3);
        }
        let again = run_experiment(&cfg).unwrap();
        assert_eq!(result.to_csv(), again.to_csv());
        // Wall-clock timing is the only field allowed to differ between runs.
        let strip = |cells: &[CellResult]| -> Vec<CellResult> {
            cells.iter().cloned().map(|mut c| { c.wall_ms = 0.0; c }).collect()
        };
        assert_eq!(strip(&result.cells), strip(&again.cells));
    }

    #[test]
    fn csv_layout_and_empty_grid() {
        let empty = ExperimentResult { config: smoke_config(), cells: vec![] };
        assert_eq!(empty.to_csv(), format!("{CSV_HEADER}\n"));

        let result = run_experiment(&smoke_config()).unwrap();
        let csv = result.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let ls_row = lines.next().unwrap();
        // Unregularized kind: gamma and gamma_hat_median stay empty.
        let fields: Vec<&str> = ls_row.split(',').collect();
        assert_eq!(fields.len(), 8);
        assert_eq!(fields[0], "0.5");
        assert_eq!(fields[1], "200");
        assert_eq!(fields[2], "LS");
        assert_eq!(fields[3], "");
        assert_eq!(fields[6], "");
        let crwls_row = lines.next().unwrap();
        let fields: Vec<&str> = crwls_row.split(',').collect();
        assert_eq!(fields[2], "CRWLS");
        assert_eq!(fields[3], "0.5");
    }

    #[test]
    fn json_round_trip_is_idempotent() {
        let result = run_experiment(&smoke_config()).unwrap();
        let json = result.to_json();
        let loaded = ExperimentResult::from_json(&json).unwrap();
        assert_eq!(loaded, result);
        assert_eq!(loaded.to_json(), json);
    }

    #[test]
    fn tuned_policies_fill_the_median_column() {
        let mut cfg = smoke_config();
        cfg.estimators = vec![EstimatorKind::Crwls];
        cfg.gamma_policy = GammaPolicy::TuneU;
        cfg.n_list = vec![400];
        let result = run_experiment(&cfg).unwrap();
        let cell = &result.cells[0];
        assert!(cell.error.is_none(), "{:?}", cell.error);
        assert!(cell.gamma.is_none());
        assert!(cell.gamma_hat_median.unwrap() > 0.0);
        assert_eq!(cell.rounds_detail.as_ref().unwrap().gamma_hats.len(), 3);

        cfg.gamma_policy = GammaPolicy::TuneR;
        let result = run_experiment(&cfg).unwrap();
        let cell = &result.cells[0];
        assert!(cell.error.is_none(), "{:?}", cell.error);
        assert!(cell.gamma.is_none());
        assert!(cell.gamma_hat_median.unwrap() > 0.0);
    }

    #[test]
    fn degenerate_window_cell_records_error_without_aborting() {
        let mut cfg = smoke_config();
        // q = 0 is maximally mixed: the window policy must fail on that grid
        // point but leave the q = 0.5 cells intact.
        cfg.state_params = vec![0.0, 0.5];
        cfg.estimators = vec![EstimatorKind::Crwls];
        cfg.gamma_policy = GammaPolicy::WindowMidpoint;
        let result = run_experiment(&cfg).unwrap();
        assert_eq!(result.cells.len(), 2);
        assert!(result.cells[0].error.as_ref().unwrap().contains("window midpoint"));
        assert!(result.cells[0].mse_exp.is_none());
        assert!(result.cells[1].error.is_none());
        assert!(result.cells[1].mse_exp.is_some());
    }

    #[test]
    fn preset_configs_pass_their_own_check() {
        for scenario in [
            Scenario::Werner36,
            Scenario::WernerCrls,
            Scenario::SixQubitUnder { num_projectors: 200 },
            Scenario::PauliUnder { num_qubits: 3, num_projectors: 40 },
        ] {
            let cfg = ExperimentConfig::preset(scenario, PathBuf::from("out"));
            cfg.check().unwrap();
        }
    }

    #[test]
    fn scenario_serde_names() {
        let s: Scenario = serde_json::from_str(r#"{"name":"six_qubit_under"}"#).unwrap();
        assert_eq!(s, Scenario::SixQubitUnder { num_projectors: 200 });
        let s: Scenario =
            serde_json::from_str(r#"{"name":"pauli_under","num_qubits":3,"num_projectors":40}"#)
                .unwrap();
        assert_eq!(s, Scenario::PauliUnder { num_qubits: 3, num_projectors: 40 });
        let p: GammaPolicy = serde_json::from_str(r#"{"policy":"tune_u"}"#).unwrap();
        assert_eq!(p, GammaPolicy::TuneU);
        let p: GammaPolicy =
            serde_json::from_str(r#"{"policy":"fixed","gammas":[1.0,10.0]}"#).unwrap();
        assert_eq!(p, GammaPolicy::Fixed(vec![1.0, 10.0]));
    }
}
