//! The estimator family: plain/weighted least squares, their trace-one
//! constrained versions, and the ridge-regularized constrained estimators,
//! each with a closed-form solution and an exact MSE matrix.
//!
//! All solves go through a symmetric positive definite factorization of
//! N = A^T W A + gamma I. When gamma > 0 and the outcome count M is smaller
//! than d^2 the factorization switches to the push-through form
//! (A^T W A + gamma I)^{-1} A^T W^{1/2} = A^T W^{1/2} (W^{1/2} A A^T W^{1/2} + gamma I)^{-1},
//! so under-determinate problems only ever factor M x M matrices.

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::linalg::{RMat, RVec, ThetaVector};
use crate::measurement::{
    noise_covariance_diag, weight_matrix_empirical, weight_matrix_true, DesignMatrix,
    MeasurementRecord, Weight,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EstimatorKind {
    Ls,
    Wls,
    Awls,
    Cls,
    Cwls,
    Rwls,
    Crwls,
    Crls,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Ls => "LS",
            EstimatorKind::Wls => "WLS",
            EstimatorKind::Awls => "AWLS",
            EstimatorKind::Cls => "CLS",
            EstimatorKind::Cwls => "CWLS",
            EstimatorKind::Rwls => "RWLS",
            EstimatorKind::Crwls => "CRWLS",
            EstimatorKind::Crls => "CRLS",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text.to_ascii_uppercase().as_str() {
            "LS" => Ok(EstimatorKind::Ls),
            "WLS" => Ok(EstimatorKind::Wls),
            "AWLS" => Ok(EstimatorKind::Awls),
            "CLS" => Ok(EstimatorKind::Cls),
            "CWLS" => Ok(EstimatorKind::Cwls),
            "RWLS" => Ok(EstimatorKind::Rwls),
            "CRWLS" => Ok(EstimatorKind::Crwls),
            "CRLS" => Ok(EstimatorKind::Crls),
            other => Err(Error::Config(format!("unknown estimator kind {other:?}"))),
        }
    }

    /// Whether the closed form enforces theta^T Tr(B) = 1.
    pub fn constrained(&self) -> bool {
        matches!(
            self,
            EstimatorKind::Cls | EstimatorKind::Cwls | EstimatorKind::Crwls | EstimatorKind::Crls
        )
    }

    /// Whether the estimator map uses the inverse-variance weight (as
    /// opposed to forcing W = I).
    pub fn weighted(&self) -> bool {
        matches!(
            self,
            EstimatorKind::Wls
                | EstimatorKind::Awls
                | EstimatorKind::Cwls
                | EstimatorKind::Rwls
                | EstimatorKind::Crwls
        )
    }

    /// Whether a ridge term is part of the estimator map.
    pub fn regularized(&self) -> bool {
        matches!(
            self,
            EstimatorKind::Rwls | EstimatorKind::Crwls | EstimatorKind::Crls
        )
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One regression instance: design matrix, data vector, weight, ridge gain.
#[derive(Debug, Clone)]
pub struct RegressionProblem<'a> {
    pub a: &'a DesignMatrix,
    pub trace_vector: &'a RVec,
    pub y: &'a RVec,
    pub weight: Weight,
    pub gamma: f64,
}

impl<'a> RegressionProblem<'a> {
    pub fn new(a: &'a DesignMatrix, trace_vector: &'a RVec, y: &'a RVec) -> Self {
        Self { a, trace_vector, y, weight: Weight::Identity, gamma: 0.0 }
    }

    pub fn with_weight(mut self, weight: Weight) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    fn check_shapes(&self) -> Result<()> {
        if self.a.num_outcomes() != self.y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} outcomes vs {} data entries",
                self.a.num_outcomes(),
                self.y.len()
            )));
        }
        if self.a.num_coords() != self.trace_vector.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} coordinates vs trace vector of length {}",
                self.a.num_coords(),
                self.trace_vector.len()
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma = {} must be finite and >= 0", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Probability clamps applied while building an empirical weight.
    pub clamp_count: usize,
    /// Rough condition estimate of the factored normal matrix, from the
    /// squared ratio of extreme Cholesky diagonal entries.
    pub condition: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub kind: EstimatorKind,
    pub theta_hat: ThetaVector,
    pub gamma: Option<f64>,
    /// Exact MSE matrix; only filled by the truth-side `mse_matrix` call.
    pub mse_matrix: Option<RMat>,
    pub constraint_residual: f64,
    pub diagnostics: Diagnostics,
}

impl EstimateReport {
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            kind: &'static str,
            theta_hat: Vec<f64>,
            gamma: Option<f64>,
            constraint_residual: f64,
            diagnostics: &'a Diagnostics,
        }
        serde_json::to_string_pretty(&Doc {
            kind: self.kind.as_str(),
            theta_hat: self.theta_hat.coords.iter().copied().collect(),
            gamma: self.gamma,
            constraint_residual: self.constraint_residual,
            diagnostics: &self.diagnostics,
        })
        .expect("report serialization cannot fail")
    }
}

/// SPD factorization of N = A^T W A + gamma I, in whichever of the two
/// equivalent forms is cheaper.
pub(crate) enum NormalSolver {
    Direct {
        chol: Cholesky<f64, nalgebra::Dyn>,
        dim: usize,
    },
    Woodbury {
        /// B = A^T W^{1/2}, d^2 x M.
        b: RMat,
        /// Cholesky of G = B^T B + gamma I, M x M.
        chol: Cholesky<f64, nalgebra::Dyn>,
        gamma: f64,
        dim: usize,
    },
}

impl NormalSolver {
    pub(crate) fn build(a: &DesignMatrix, weight: &Weight, gamma: f64) -> Result<Self> {
        let d2 = a.num_coords();
        let m = a.num_outcomes();
        if gamma > 0.0 && m < d2 {
            let b = weight.sqrt_scale_rows(a.entries()).transpose();
            let mut g = &b.transpose() * &b;
            for i in 0..m {
                g[(i, i)] += gamma;
            }
            let chol = Cholesky::new(g).ok_or_else(|| {
                Error::SingularSystem("push-through Gram matrix is not positive definite".into())
            })?;
            return Ok(NormalSolver::Woodbury { b, chol, gamma, dim: d2 });
        }
        if gamma == 0.0 && !a.rank_full() {
            return Err(Error::SingularSystem(
                "A^T W A is singular: design matrix lacks full column rank and gamma = 0".into(),
            ));
        }
        let wa = weight.scale_rows(a.entries());
        let mut n = a.entries().transpose() * wa;
        for i in 0..d2 {
            n[(i, i)] += gamma;
        }
        let chol = Cholesky::new(n).ok_or_else(|| {
            Error::SingularSystem("normal matrix is not positive definite".into())
        })?;
        Ok(NormalSolver::Direct { chol, dim: d2 })
    }

    pub(crate) fn dim(&self) -> usize {
        match self {
            NormalSolver::Direct { dim, .. } | NormalSolver::Woodbury { dim, .. } => *dim,
        }
    }

    /// N^{-1} v.
    pub(crate) fn solve_vec(&self, v: &RVec) -> RVec {
        match self {
            NormalSolver::Direct { chol, .. } => chol.solve(v),
            NormalSolver::Woodbury { b, chol, gamma, .. } => {
                let bt_v = b.transpose() * v;
                let inner = chol.solve(&bt_v);
                (v - b * inner) / *gamma
            }
        }
    }

    /// N^{-1} X, column by column.
    pub(crate) fn solve_mat(&self, x: &RMat) -> RMat {
        match self {
            NormalSolver::Direct { chol, .. } => chol.solve(x),
            NormalSolver::Woodbury { b, chol, gamma, .. } => {
                let bt_x = b.transpose() * x;
                let inner = chol.solve(&bt_x);
                (x - b * inner) / *gamma
            }
        }
    }

    /// Tr(N^{-1}).
    pub(crate) fn trace_inv(&self) -> f64 {
        match self {
            NormalSolver::Direct { chol, .. } => chol.inverse().trace(),
            NormalSolver::Woodbury { chol, gamma, dim, b } => {
                let m = b.ncols();
                let g_inv = chol.inverse();
                (*dim as f64 - m as f64) / gamma + g_inv.trace()
            }
        }
    }

    /// Tr(N^{-2}).
    #[cfg(test)]
    pub(crate) fn trace_inv_sq(&self) -> f64 {
        match self {
            NormalSolver::Direct { chol, .. } => {
                let inv = chol.inverse();
                inv.iter().map(|x| x * x).sum()
            }
            NormalSolver::Woodbury { chol, gamma, dim, b } => {
                let m = b.ncols();
                let g_inv = chol.inverse();
                let g_inv_fro2: f64 = g_inv.iter().map(|x| x * x).sum();
                (*dim as f64 - m as f64) / (gamma * gamma) + g_inv_fro2
            }
        }
    }

    /// Squared ratio of extreme Cholesky diagonal entries; a cheap stand-in
    /// for the condition number.
    fn condition_estimate(&self) -> f64 {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        let l = match self {
            NormalSolver::Direct { chol, .. } => chol.l_dirty(),
            NormalSolver::Woodbury { chol, .. } => chol.l_dirty(),
        };
        for i in 0..l.nrows() {
            let v = l[(i, i)].abs();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (hi / lo) * (hi / lo)
    }
}

fn rank_gate(kind: EstimatorKind, a: &DesignMatrix) -> Result<()> {
    if !a.rank_full() {
        return Err(Error::RankDeficient(format!(
            "{kind} requires a design matrix with full column rank"
        )));
    }
    Ok(())
}

fn gamma_gate(kind: EstimatorKind, gamma: f64) -> Result<()> {
    if gamma != 0.0 {
        return Err(Error::InvalidArgument(format!(
            "{kind} takes no ridge term but gamma = {gamma}"
        )));
    }
    Ok(())
}

struct Core {
    theta: RVec,
    solver: NormalSolver,
}

/// theta = N^{-1} A^T W y.
fn rwls_core(a: &DesignMatrix, weight: &Weight, gamma: f64, y: &RVec) -> Result<Core> {
    let solver = NormalSolver::build(a, weight, gamma)?;
    let theta = match &solver {
        NormalSolver::Direct { .. } => {
            let rhs = a.entries().transpose() * weight.scale_vec(y);
            solver.solve_vec(&rhs)
        }
        NormalSolver::Woodbury { b, chol, .. } => {
            // Push-through: (B B^T + g I)^{-1} B = B (B^T B + g I)^{-1}.
            let c = weight.sqrt_scale_vec(y);
            b * chol.solve(&c)
        }
    };
    Ok(Core { theta, solver })
}

/// Projection onto the trace constraint: theta - C t (t^T theta - 1)/(t^T C t).
fn constrain(core: &Core, t: &RVec, theta: &RVec) -> RVec {
    let ct = core.solver.solve_vec(t);
    let tct = t.dot(&ct);
    let excess = t.dot(theta) - 1.0;
    theta - ct * (excess / tct)
}

fn finish(
    kind: EstimatorKind,
    theta: RVec,
    core: &Core,
    trace_vector: &RVec,
    gamma: Option<f64>,
    clamp_count: usize,
) -> EstimateReport {
    let d2 = theta.len();
    let basis_dim = (d2 as f64).sqrt().round() as usize;
    let theta_hat = ThetaVector { coords: theta, basis_dim };
    let constraint_residual = theta_hat.constraint_residual(trace_vector);
    EstimateReport {
        kind,
        theta_hat,
        gamma,
        mse_matrix: None,
        constraint_residual,
        diagnostics: Diagnostics {
            clamp_count,
            condition: Some(core.solver.condition_estimate()),
        },
    }
}

/// theta = (A^T A)^{-1} A^T y.
pub fn ls(problem: &RegressionProblem) -> Result<EstimateReport> {
    problem.check_shapes()?;
    gamma_gate(EstimatorKind::Ls, problem.gamma)?;
    rank_gate(EstimatorKind::Ls, problem.a)?;
    let core = rwls_core(problem.a, &Weight::Identity, 0.0, problem.y)?;
    let theta = core.theta.clone();
    Ok(finish(EstimatorKind::Ls, theta, &core, problem.trace_vector, None, 0))
}

/// theta = (A^T W A)^{-1} A^T W y.
pub fn wls(problem: &RegressionProblem) -> Result<EstimateReport> {
    problem.check_shapes()?;
    gamma_gate(EstimatorKind::Wls, problem.gamma)?;
    rank_gate(EstimatorKind::Wls, problem.a)?;
    let core = rwls_core(problem.a, &problem.weight, 0.0, problem.y)?;
    let theta = core.theta.clone();
    Ok(finish(
        EstimatorKind::Wls,
        theta,
        &core,
        problem.trace_vector,
        None,
        problem.weight.clamp_count(),
    ))
}

/// WLS with the weight estimated from the record itself (clamped empirical
/// frequencies); the feasible stand-in for WLS when the true probabilities
/// are unknown.
pub fn awls(
    a: &DesignMatrix,
    trace_vector: &RVec,
    record: &MeasurementRecord,
    eps_clamp: f64,
) -> Result<EstimateReport> {
    rank_gate(EstimatorKind::Awls, a)?;
    let w = weight_matrix_empirical(record, eps_clamp);
    let clamp_count = w.clamp_count;
    let problem = RegressionProblem::new(a, trace_vector, &record.frequencies)
        .with_weight(Weight::Diag(w));
    let core = rwls_core(problem.a, &problem.weight, 0.0, problem.y)?;
    let theta = core.theta.clone();
    Ok(finish(EstimatorKind::Awls, theta, &core, trace_vector, None, clamp_count))
}

/// Trace-constrained LS.
pub fn cls(problem: &RegressionProblem) -> Result<EstimateReport> {
    problem.check_shapes()?;
    gamma_gate(EstimatorKind::Cls, problem.gamma)?;
    rank_gate(EstimatorKind::Cls, problem.a)?;
    let core = rwls_core(problem.a, &Weight::Identity, 0.0, problem.y)?;
    let theta = constrain(&core, problem.trace_vector, &core.theta);
    Ok(finish(EstimatorKind::Cls, theta, &core, problem.trace_vector, None, 0))
}

/// Trace-constrained WLS.
pub fn cwls(problem: &RegressionProblem) -> Result<EstimateReport> {
    problem.check_shapes()?;
    gamma_gate(EstimatorKind::Cwls, problem.gamma)?;
    rank_gate(EstimatorKind::Cwls, problem.a)?;
    let core = rwls_core(problem.a, &problem.weight, 0.0, problem.y)?;
    let theta = constrain(&core, problem.trace_vector, &core.theta);
    Ok(finish(
        EstimatorKind::Cwls,
        theta,
        &core,
        problem.trace_vector,
        None,
        problem.weight.clamp_count(),
    ))
}

/// Ridge-regularized WLS, no constraint.
pub fn rwls(problem: &RegressionProblem) -> Result<EstimateReport> {
    problem.check_shapes()?;
    let core = rwls_core(problem.a, &problem.weight, problem.gamma, problem.y)?;
    let theta = core.theta.clone();
    Ok(finish(
        EstimatorKind::Rwls,
        theta,
        &core,
        problem.trace_vector,
        Some(problem.gamma),
        problem.weight.clamp_count(),
    ))
}

/// Ridge-regularized trace-constrained WLS; works for any rank of A as long
/// as gamma > 0.
pub fn crwls(problem: &RegressionProblem) -> Result<EstimateReport> {
    problem.check_shapes()?;
    let core = rwls_core(problem.a, &problem.weight, problem.gamma, problem.y)?;
    let theta = constrain(&core, problem.trace_vector, &core.theta);
    Ok(finish(
        EstimatorKind::Crwls,
        theta,
        &core,
        problem.trace_vector,
        Some(problem.gamma),
        problem.weight.clamp_count(),
    ))
}

/// CRWLS with the weight forced to the identity; its own reporting kind.
pub fn crls(problem: &RegressionProblem) -> Result<EstimateReport> {
    problem.check_shapes()?;
    let core = rwls_core(problem.a, &Weight::Identity, problem.gamma, problem.y)?;
    let theta = constrain(&core, problem.trace_vector, &core.theta);
    Ok(finish(
        EstimatorKind::Crls,
        theta,
        &core,
        problem.trace_vector,
        Some(problem.gamma),
        0,
    ))
}

/// Data-only dispatcher used by the CLI: weighted kinds take the clamped
/// empirical weight built from the record.
pub fn estimate_from_record(
    kind: EstimatorKind,
    a: &DesignMatrix,
    trace_vector: &RVec,
    record: &MeasurementRecord,
    gamma: f64,
    eps_clamp: f64,
) -> Result<EstimateReport> {
    let y = &record.frequencies;
    let weight = if kind.weighted() {
        Weight::Diag(weight_matrix_empirical(record, eps_clamp))
    } else {
        Weight::Identity
    };
    let problem = RegressionProblem::new(a, trace_vector, y)
        .with_weight(weight)
        .with_gamma(if kind.regularized() { gamma } else { 0.0 });
    let mut report = match kind {
        EstimatorKind::Ls => ls(&problem),
        EstimatorKind::Wls => wls(&problem),
        EstimatorKind::Awls => return awls(a, trace_vector, record, eps_clamp),
        EstimatorKind::Cls => cls(&problem),
        EstimatorKind::Cwls => cwls(&problem),
        EstimatorKind::Rwls => rwls(&problem),
        EstimatorKind::Crwls => crwls(&problem),
        EstimatorKind::Crls => crls(&problem),
    }?;
    report.kind = kind;
    Ok(report)
}

/// The affine map theta-hat = H y + f of the constrained ridge estimator:
/// H = F A^T W and f = C t / (t^T C t), with C = (A^T W A + gamma I)^{-1}
/// and F = C - C t t^T C / (t^T C t). Never forms C densely.
pub fn affine_form(
    a: &DesignMatrix,
    weight: &Weight,
    trace_vector: &RVec,
    gamma: f64,
) -> Result<(RMat, RVec)> {
    let solver = NormalSolver::build(a, weight, gamma)?;
    let t = trace_vector;
    let u = solver.solve_vec(t); // C t
    let s = t.dot(&u);
    let atw = weight.scale_rows(a.entries()).transpose(); // A^T W, d^2 x M
    let catw = solver.solve_mat(&atw); // C A^T W
    let correction = &u * ((t.transpose() * &catw) / s); // C t (t^T C A^T W)/s
    let h = catw - correction;
    let f = u / s;
    Ok((h, f))
}

/// Unconstrained affine map: H = C A^T W, f = 0.
pub(crate) fn affine_form_unconstrained(
    a: &DesignMatrix,
    weight: &Weight,
    gamma: f64,
) -> Result<(RMat, RVec)> {
    let solver = NormalSolver::build(a, weight, gamma)?;
    let atw = weight.scale_rows(a.entries()).transpose();
    let h = solver.solve_mat(&atw);
    Ok((h, RVec::zeros(a.num_coords())))
}

fn estimator_weight(kind: EstimatorKind, w_true: &Weight) -> Weight {
    if kind.weighted() {
        w_true.clone()
    } else {
        Weight::Identity
    }
}

fn kind_affine(
    kind: EstimatorKind,
    a: &DesignMatrix,
    w_est: &Weight,
    trace_vector: &RVec,
    gamma: f64,
) -> Result<(RMat, RVec)> {
    if kind.constrained() {
        affine_form(a, w_est, trace_vector, gamma)
    } else {
        affine_form_unconstrained(a, w_est, gamma)
    }
}

/// Exact MSE matrix of an estimator kind under the true probabilities:
/// MSE = b b^T + H P H^T with bias b = (H A - I) theta + f and
/// P = diag(p - p^2)/n. Requires the simulation-side truth.
pub fn mse_matrix(
    kind: EstimatorKind,
    a: &DesignMatrix,
    p_true: &RVec,
    n: u64,
    theta_true: &ThetaVector,
    trace_vector: &RVec,
    gamma: f64,
) -> Result<RMat> {
    let gamma = if kind.regularized() { gamma } else { 0.0 };
    let w_true = Weight::Diag(weight_matrix_true(p_true, n)?);
    let w_est = estimator_weight(kind, &w_true);
    let (h, f) = kind_affine(kind, a, &w_est, trace_vector, gamma)?;
    let theta = &theta_true.coords;
    let bias = &h * (a.entries() * theta) - theta + f;
    let p_diag = noise_covariance_diag(p_true, n);
    let mut hp = h.clone();
    for (j, &pj) in p_diag.iter().enumerate() {
        hp.column_mut(j).scale_mut(pj);
    }
    let mut mse = &bias * bias.transpose() + hp * h.transpose();
    // Symmetrize away factorization roundoff.
    let mse_t = mse.transpose();
    mse += mse_t;
    mse.scale_mut(0.5);
    Ok(mse)
}

/// Tr MSE of the constrained ridge map H = F A^T W_est with an arbitrary
/// noise covariance diag(noise_cov): |gamma F theta|^2 + |H diag^{1/2}|_F^2.
/// Shared by the MSE report and the risk tuner, which decouple the
/// estimator weight from the noise model.
pub(crate) fn constrained_trace_mse(
    solver: &NormalSolver,
    a: &DesignMatrix,
    w_est: &Weight,
    noise_cov: &RVec,
    theta: &RVec,
    t: &RVec,
    gamma: f64,
) -> f64 {
    let mut x = w_est.scale_rows(a.entries()).transpose();
    for (j, &pj) in noise_cov.iter().enumerate() {
        x.column_mut(j).scale_mut(pj.sqrt());
    }
    let cx = solver.solve_mat(&x);
    let u = solver.solve_vec(t);
    let s = t.dot(&u);
    let fx = &cx - &u * ((t.transpose() * &cx) / s);
    let ctheta = solver.solve_vec(theta);
    let ftheta = &ctheta - &u * (t.dot(&ctheta) / s);
    let bias = ftheta * (-gamma);
    bias.norm_squared() + fx.iter().map(|v| v * v).sum::<f64>()
}

/// Tr of `mse_matrix` without forming any d^2 x d^2 matrix, so it stays
/// cheap for under-determinate problems: Tr MSE = |b|^2 + |H P^{1/2}|_F^2.
pub fn mse_trace(
    kind: EstimatorKind,
    a: &DesignMatrix,
    p_true: &RVec,
    n: u64,
    theta_true: &ThetaVector,
    trace_vector: &RVec,
    gamma: f64,
) -> Result<f64> {
    let gamma = if kind.regularized() { gamma } else { 0.0 };
    let w_true = Weight::Diag(weight_matrix_true(p_true, n)?);
    let w_est = estimator_weight(kind, &w_true);
    let solver = NormalSolver::build(a, &w_est, gamma)?;
    let theta = &theta_true.coords;
    let t = trace_vector;
    let p_diag = noise_covariance_diag(p_true, n);

    if kind.constrained() {
        return Ok(constrained_trace_mse(
            &solver, a, &w_est, &p_diag, theta, t, gamma,
        ));
    }

    // X = A^T W_est P^{1/2}; columns j scaled by w_j * sqrt(p_j).
    let mut x = w_est.scale_rows(a.entries()).transpose();
    for (j, &pj) in p_diag.iter().enumerate() {
        x.column_mut(j).scale_mut(pj.sqrt());
    }
    let cx = solver.solve_mat(&x);
    let ctheta = solver.solve_vec(theta);
    let bias = ctheta * (-gamma);
    Ok(bias.norm_squared() + cx.iter().map(|v| v * v).sum::<f64>())
}
