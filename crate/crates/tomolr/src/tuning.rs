//! Choosing the ridge gain.
//!
//! The tuning objective is the weighted prediction risk
//! E (A theta - A theta_hat)^T W (A theta - A theta_hat), not the
//! parameter-space MSE trace. Two routes to a gain: minimizing that risk
//! with a reference theta plugged in, or minimizing an unbiased cost built
//! only from the data, weighted residual + 2 Tr(A H(gamma)). Both share the
//! same grid-then-golden-section search. `gamma_star` is the
//! sample-size-free limit both tuners approach on full-rank designs.

use serde::Serialize;

use crate::equiv::{AsymptoticMatrices, ReducedModel};
use crate::estimators::NormalSolver;
use crate::linalg::RVec;
use crate::measurement::{DesignMatrix, Weight};
use crate::{Error, Result};

/// A sampled criterion curve plus its minimizer.
#[derive(Debug, Clone)]
pub struct RiskCurve {
    /// Grid abscissae, ascending (gamma = 0 included when evaluable).
    pub gammas: Vec<f64>,
    pub values: Vec<f64>,
    pub minimizer: f64,
    pub min_value: f64,
    /// The grid minimum sat on the upper cap; the reported minimizer is the
    /// cap itself and should be read as "no interior optimum found".
    pub capped: bool,
    /// Central second difference of the criterion at the minimizer.
    pub curvature_at_min: f64,
}

impl RiskCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gamma,value\n");
        for (g, v) in self.gammas.iter().zip(&self.values) {
            out.push_str(&format!("{g},{v}\n"));
        }
        out
    }

    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc {
            minimizer: f64,
            capped: bool,
            curvature_at_min: f64,
        }
        serde_json::to_string_pretty(&Doc {
            minimizer: self.minimizer,
            capped: self.capped,
            curvature_at_min: self.curvature_at_min,
        })
        .expect("summary serialization cannot fail")
    }
}

/// Grid-then-refine minimizer over gamma >= 0.
#[derive(Debug, Clone)]
pub struct GammaSearch {
    /// Number of log-spaced grid points between `gamma_floor` and the cap.
    pub grid_points: usize,
    pub gamma_floor: f64,
    /// Cap = cap_scale * n; weights grow linearly in n, so useful gains do
    /// too.
    pub cap_scale: f64,
    /// Golden-section stop: interval below refine_rel * (1 + gamma).
    pub refine_rel: f64,
}

impl Default for GammaSearch {
    fn default() -> Self {
        Self { grid_points: 61, gamma_floor: 1e-6, cap_scale: 1e6, refine_rel: 1e-4 }
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

impl GammaSearch {
    pub fn gamma_cap(&self, n: u64) -> f64 {
        self.cap_scale * n as f64
    }

    /// Minimize `criterion` over [0, cap]. The gamma = 0 point alone is
    /// allowed to fail numerically (rank-deficient designs have no
    /// unregularized estimate); any other failure aborts. Ties resolve
    /// toward the smaller gamma.
    pub fn minimize<F>(&self, n: u64, criterion: F) -> Result<RiskCurve>
    where
        F: Fn(f64) -> Result<f64>,
    {
        if self.grid_points < 3 {
            return Err(Error::InvalidArgument("gamma grid needs at least 3 points".into()));
        }
        let cap = self.gamma_cap(n);
        let ratio = (cap / self.gamma_floor).powf(1.0 / (self.grid_points as f64 - 1.0));
        let mut gammas = Vec::with_capacity(self.grid_points + 1);
        let mut values = Vec::with_capacity(self.grid_points + 1);
        match criterion(0.0) {
            Ok(v) if v.is_finite() => {
                gammas.push(0.0);
                values.push(v);
            }
            Ok(_) => {}
            Err(e) if e.is_numerical() => {}
            Err(e) => return Err(e),
        }
        for i in 0..self.grid_points {
            let g = if i + 1 == self.grid_points {
                cap
            } else {
                self.gamma_floor * ratio.powi(i as i32)
            };
            let v = criterion(g)?;
            if !v.is_finite() {
                return Err(Error::SingularSystem(format!(
                    "criterion value at gamma = {g} is not finite"
                )));
            }
            gammas.push(g);
            values.push(v);
        }

        let mut best = 0usize;
        for i in 1..values.len() {
            if values[i] < values[best] {
                best = i;
            }
        }
        let capped = best + 1 == values.len();

        let (minimizer, min_value) = if capped {
            (cap, values[best])
        } else {
            let lo = if best == 0 { 0.0 } else { gammas[best - 1] };
            let hi = gammas[best + 1];
            self.golden_section(lo, hi, &criterion)?
        };

        let h = 1e-3 * (1.0 + minimizer);
        let left = (minimizer - h).max(0.0);
        let f_left = criterion(left)?;
        let f_right = criterion(minimizer + h)?;
        let f_mid = criterion(minimizer)?;
        let curvature_at_min = (f_right - 2.0 * f_mid + f_left) / (h * h);

        Ok(RiskCurve { gammas, values, minimizer, min_value, capped, curvature_at_min })
    }

    fn golden_section<F>(&self, mut a: f64, mut b: f64, criterion: &F) -> Result<(f64, f64)>
    where
        F: Fn(f64) -> Result<f64>,
    {
        let mut x1 = b - INV_PHI * (b - a);
        let mut x2 = a + INV_PHI * (b - a);
        let mut f1 = criterion(x1)?;
        let mut f2 = criterion(x2)?;
        while (b - a) > self.refine_rel * (1.0 + 0.5 * (a + b)) {
            if f1 <= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - INV_PHI * (b - a);
                f1 = criterion(x1)?;
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + INV_PHI * (b - a);
                f2 = criterion(x2)?;
            }
        }
        Ok(if f1 <= f2 { (x1, f1) } else { (x2, f2) })
    }
}

/// Diagonal of the noise covariance implied by an inverse-variance weight.
fn noise_cov_of(weight: &Weight, m: usize) -> RVec {
    match weight {
        Weight::Identity => RVec::from_element(m, 1.0),
        Weight::Diag(w) => w.diag.map(|v| 1.0 / v),
    }
}

/// Weighted prediction risk of the constrained ridge estimator whose map
/// uses `w_est`, around the reference state `theta_ref`:
/// gamma^2 |W^{1/2} A F theta|^2 + |W^{1/2} A H P^{1/2}|_F^2,
/// with W = `w_risk` and noise covariance P = W^{-1}. At gamma = 0 with
/// matched weights this is exactly d^2 - 1.
pub fn risk_theta(
    a: &DesignMatrix,
    trace_vector: &RVec,
    theta_ref: &RVec,
    w_risk: &Weight,
    w_est: &Weight,
    gamma: f64,
) -> Result<f64> {
    let solver = NormalSolver::build(a, w_est, gamma)?;
    let t = trace_vector;
    let u = solver.solve_vec(t);
    let s = t.dot(&u);

    let ctheta = solver.solve_vec(theta_ref);
    let ftheta = &ctheta - &u * (t.dot(&ctheta) / s);
    let a_ftheta = a.entries() * &ftheta;
    let bias_term = gamma * gamma * w_risk.quad(&a_ftheta);

    // W^{1/2} A H P^{1/2} with H = F A^T W_est.
    let noise_cov = noise_cov_of(w_risk, a.num_outcomes());
    let mut x = w_est.scale_rows(a.entries()).transpose();
    for (j, &pj) in noise_cov.iter().enumerate() {
        x.column_mut(j).scale_mut(pj.sqrt());
    }
    let cx = solver.solve_mat(&x);
    let fx = &cx - &u * ((t.transpose() * &cx) / s);
    let a_fx = a.entries() * fx;
    let w_afx = w_risk.sqrt_scale_rows(&a_fx);
    Ok(bias_term + w_afx.iter().map(|v| v * v).sum::<f64>())
}

/// Tr(A H(gamma)) for the constrained ridge map: d^2 - 1 - gamma Tr F.
fn effective_dof(solver: &NormalSolver, trace_vector: &RVec, gamma: f64) -> f64 {
    let d2 = solver.dim() as f64;
    if gamma == 0.0 {
        return d2 - 1.0;
    }
    let u = solver.solve_vec(trace_vector);
    let s = trace_vector.dot(&u);
    let trace_f = solver.trace_inv() - u.norm_squared() / s;
    d2 - 1.0 - gamma * trace_f
}

/// Data-only criterion whose expectation matches the prediction risk up to
/// a gamma-independent constant:
/// (y - A theta_hat)^T W_cost (y - A theta_hat) + 2 Tr(A H). The cost
/// weight must model the inverse noise variance even when the estimator map
/// itself runs unweighted.
pub fn unbiased_cost_theta(
    a: &DesignMatrix,
    trace_vector: &RVec,
    y: &RVec,
    w_cost: &Weight,
    w_est: &Weight,
    gamma: f64,
) -> Result<f64> {
    let solver = NormalSolver::build(a, w_est, gamma)?;
    let rhs = a.entries().transpose() * w_est.scale_vec(y);
    let theta_r = solver.solve_vec(&rhs);
    let u = solver.solve_vec(trace_vector);
    let s = trace_vector.dot(&u);
    let theta = &theta_r - &u * ((trace_vector.dot(&theta_r) - 1.0) / s);
    let resid = y - a.entries() * theta;
    Ok(w_cost.quad(&resid) + 2.0 * effective_dof(&solver, trace_vector, gamma))
}

/// The same criterion in reduced coordinates:
/// (z - K alpha_hat)^T W_cost (z - K alpha_hat) + 2 Tr(K U).
pub fn unbiased_cost_alpha(
    model: &ReducedModel,
    w_cost: &Weight,
    w_est: &Weight,
    gamma: f64,
) -> Result<f64> {
    let solver = NormalSolver::build(&model.k, w_est, gamma)?;
    let alpha = model.alpha_rwls(w_est, gamma)?;
    let resid = &model.z - model.k.entries() * alpha;
    let d2m1 = model.k.num_coords() as f64;
    let dof = if gamma == 0.0 {
        d2m1
    } else {
        d2m1 - gamma * solver.trace_inv()
    };
    Ok(w_cost.quad(&resid) + 2.0 * dof)
}

/// Tr(XY) for square matrices without forming the product.
fn trace_of_product(x: &crate::linalg::RMat, y: &crate::linalg::RMat) -> f64 {
    let d = x.nrows();
    let mut acc = 0.0;
    for b in 0..d {
        for a in 0..d {
            acc += x[(a, b)] * y[(b, a)];
        }
    }
    acc
}

/// The matched-weight prediction risk in reduced coordinates, from the
/// asymptotic matrices with S = (Sigma + (gamma/n) I)^{-1}:
/// Tr((Sigma S)^2) + (gamma^2/n) alpha^T S Sigma S alpha.
/// Equals `risk_theta` with the true inverse-variance weight on both slots.
pub fn risk_alpha(
    asym: &AsymptoticMatrices,
    alpha: &RVec,
    gamma: f64,
    n: u64,
) -> Result<f64> {
    let s = asym.s_of(gamma, n)?;
    let nf = n as f64;
    let sa = &s * alpha;
    let quad = (&asym.sigma * &sa).dot(&sa);
    let ss = &asym.sigma * &s;
    Ok(trace_of_product(&ss, &ss) + gamma * gamma * quad / nf)
}

/// Risk-optimal gain for the constrained ridge estimator around
/// `theta_ref`, by exact prediction-risk minimization.
pub fn tune_gamma_r(
    a: &DesignMatrix,
    trace_vector: &RVec,
    theta_ref: &RVec,
    w_risk: &Weight,
    w_est: &Weight,
    n: u64,
    search: &GammaSearch,
) -> Result<RiskCurve> {
    search.minimize(n, |gamma| {
        risk_theta(a, trace_vector, theta_ref, w_risk, w_est, gamma)
    })
}

/// Data-driven gain by unbiased cost minimization.
pub fn tune_gamma_u(
    a: &DesignMatrix,
    trace_vector: &RVec,
    y: &RVec,
    w_cost: &Weight,
    w_est: &Weight,
    n: u64,
    search: &GammaSearch,
) -> Result<RiskCurve> {
    search.minimize(n, |gamma| {
        unbiased_cost_theta(a, trace_vector, y, w_cost, w_est, gamma)
    })
}

/// Sample-size-free optimum gamma* = Tr(Sigma^{-1}) / (alpha^T Sigma^{-1} alpha),
/// cross-checked against the full-coordinate form
/// Tr(F_0) / (theta^T F_0 theta) with F_0 built from Upsilon.
pub fn gamma_star(
    a: &DesignMatrix,
    asym: &AsymptoticMatrices,
    model: &ReducedModel,
    theta: &RVec,
    trace_vector: &RVec,
) -> Result<f64> {
    if !a.rank_full() {
        return Err(Error::RankDeficient(
            "gamma* needs a full-column-rank design matrix".into(),
        ));
    }
    let chol = nalgebra::Cholesky::new(asym.sigma.clone()).ok_or_else(|| {
        Error::RankDeficient("Sigma is not positive definite".into())
    })?;
    let sigma_inv = chol.inverse();
    let alpha = model.alpha_from_theta(theta);
    let numer = sigma_inv.trace();
    let denom = (&sigma_inv * &alpha).dot(&alpha);
    if denom < 1e-14 {
        return Err(Error::DegenerateState(
            "alpha^T Sigma^{-1} alpha vanishes; the state has no free component to shrink".into(),
        ));
    }
    let from_sigma = numer / denom;

    let chol_u = nalgebra::Cholesky::new(asym.upsilon.clone()).ok_or_else(|| {
        Error::RankDeficient("Upsilon is not positive definite".into())
    })?;
    let ups_inv = chol_u.inverse();
    let ut = &ups_inv * trace_vector;
    let f0 = &ups_inv - &ut * ut.transpose() / trace_vector.dot(&ut);
    let from_upsilon = f0.trace() / (&f0 * theta).dot(theta);
    if (from_sigma - from_upsilon).abs() > 1e-8 * (1.0 + from_sigma.abs()) {
        return Err(Error::SingularSystem(format!(
            "gamma* disagreement between coordinate systems: {from_sigma} vs {from_upsilon}"
        )));
    }
    Ok(from_sigma)
}
