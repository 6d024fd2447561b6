//! Reduced coordinates for the trace constraint.
//!
//! An orthogonal Q whose first row is t^T/|t| turns the constrained model
//! into an ordinary regression: with D = A Q^T split into its first column
//! d_col and the rest K, the data shifted by the known component,
//! z = y - d_col/|t|, obey z = K alpha + e with alpha free. Ridge estimates
//! of alpha lift back through Q^T to the constrained ridge estimate of
//! theta. Q is kept as a Householder reflection (plus a sign fix), so
//! nothing d^2 x d^2 is ever materialized for the default construction.

use nalgebra::Cholesky;

use crate::linalg::{RMat, RVec};
use crate::measurement::{weight_matrix_true, DesignMatrix, Weight};
use crate::{tol, Error, Result};

/// Orthogonal map with first row t^T/|t|, stored implicitly when possible.
#[derive(Debug, Clone)]
pub enum TraceRotation {
    /// Q = S H or Q = H for a Householder reflection H = I - 2 w w^T / w^T w,
    /// with S = diag(-1, 1, ..., 1) applied when `flip` is set. The branch is
    /// chosen so w never suffers cancellation, and Q degenerates to exactly
    /// the identity when t is already along the first axis.
    Householder { w: RVec, flip: bool },
    /// Any explicitly supplied orthogonal completion.
    Dense(RMat),
}

impl TraceRotation {
    fn from_unit(v: &RVec) -> Self {
        if v[0] > 0.0 {
            let mut w = v.clone();
            w[0] += 1.0;
            TraceRotation::Householder { w, flip: true }
        } else {
            let mut w = v.clone();
            w[0] -= 1.0;
            TraceRotation::Householder { w, flip: false }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TraceRotation::Householder { w, .. } => w.len(),
            TraceRotation::Dense(q) => q.nrows(),
        }
    }

    fn reflect(w: &RVec, x: &RVec) -> RVec {
        let scale = 2.0 * w.dot(x) / w.norm_squared();
        x - w * scale
    }

    /// Q x.
    pub fn apply(&self, x: &RVec) -> RVec {
        match self {
            TraceRotation::Householder { w, flip } => {
                let mut out = Self::reflect(w, x);
                if *flip {
                    out[0] = -out[0];
                }
                out
            }
            TraceRotation::Dense(q) => q * x,
        }
    }

    /// Q^T x.
    pub fn apply_transpose(&self, x: &RVec) -> RVec {
        match self {
            TraceRotation::Householder { w, flip } => {
                let mut x = x.clone();
                if *flip {
                    x[0] = -x[0];
                }
                Self::reflect(w, &x)
            }
            TraceRotation::Dense(q) => q.transpose() * x,
        }
    }

    /// X Q^T applied to a whole matrix (rows transform like data vectors).
    pub fn right_multiply_qt(&self, x: &RMat) -> RMat {
        match self {
            TraceRotation::Householder { w, flip } => {
                let xw = x * w;
                let mut out = x - xw * (w.transpose() * (2.0 / w.norm_squared()));
                if *flip {
                    out.column_mut(0).neg_mut();
                }
                out
            }
            TraceRotation::Dense(q) => x * q.transpose(),
        }
    }

    /// Dense Q, for inspection and small problems.
    pub fn matrix(&self) -> RMat {
        match self {
            TraceRotation::Householder { w, flip } => {
                let n = w.len();
                let mut q = RMat::identity(n, n) - (w * w.transpose()) * (2.0 / w.norm_squared());
                if *flip {
                    q.row_mut(0).neg_mut();
                }
                q
            }
            TraceRotation::Dense(q) => q.clone(),
        }
    }
}

/// Orthogonal Q with first row t^T/|t|.
pub fn build_q(trace_vector: &RVec) -> Result<TraceRotation> {
    let t_norm = trace_vector.norm();
    if t_norm < tol::TRACE {
        return Err(Error::InvalidArgument("trace vector is numerically zero".into()));
    }
    Ok(TraceRotation::from_unit(&(trace_vector / t_norm)))
}

/// The constrained regression in reduced coordinates.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    pub rotation: TraceRotation,
    /// First column of A Q^T, i.e. A t / |t|.
    pub d_col: RVec,
    /// Remaining columns of A Q^T; the design matrix of the free block.
    pub k: DesignMatrix,
    /// Shifted data z = y - d_col / |t|.
    pub z: RVec,
    /// Fixed first reduced coordinate, 1/|t|.
    pub beta1: f64,
    pub t_norm: f64,
}

impl ReducedModel {
    pub fn new(a: &DesignMatrix, y: &RVec, trace_vector: &RVec) -> Result<Self> {
        let rotation = build_q(trace_vector)?;
        Self::assemble(a, y, trace_vector, rotation)
    }

    /// Same reduction under a caller-supplied orthogonal completion. The
    /// first row must still be t^T/|t|.
    pub fn with_q(a: &DesignMatrix, y: &RVec, trace_vector: &RVec, q: RMat) -> Result<Self> {
        let n = trace_vector.len();
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "Q is {}x{} but the coordinate space has dimension {n}",
                q.nrows(),
                q.ncols()
            )));
        }
        let orth_defect = (&q * q.transpose() - RMat::identity(n, n)).amax();
        if orth_defect > tol::ORTH.max(1e-12 * n as f64) {
            return Err(Error::NotOrthonormal(orth_defect));
        }
        let v = trace_vector / trace_vector.norm();
        let row_defect = (q.row(0).transpose() - &v).amax();
        if row_defect > tol::ORTH.max(1e-12 * n as f64) {
            return Err(Error::InvalidArgument(format!(
                "first row of Q deviates from t/|t| by {row_defect:.3e}"
            )));
        }
        Self::assemble(a, y, trace_vector, TraceRotation::Dense(q))
    }

    fn assemble(
        a: &DesignMatrix,
        y: &RVec,
        trace_vector: &RVec,
        rotation: TraceRotation,
    ) -> Result<Self> {
        if a.num_coords() != trace_vector.len() {
            return Err(Error::DimensionMismatch(format!(
                "design matrix has {} coordinates, trace vector {}",
                a.num_coords(),
                trace_vector.len()
            )));
        }
        if a.num_outcomes() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "design matrix has {} outcomes, data vector {}",
                a.num_outcomes(),
                y.len()
            )));
        }
        let t_norm = trace_vector.norm();
        let beta1 = 1.0 / t_norm;
        let d_full = rotation.right_multiply_qt(a.entries());
        let d_col = d_full.column(0).into_owned();
        let k = DesignMatrix::from_entries(d_full.columns(1, d_full.ncols() - 1).into_owned());
        let z = y - &d_col * beta1;
        Ok(Self { rotation, d_col, k, z, beta1, t_norm })
    }

    /// Ridge estimate of the free block: (K^T W K + gamma I)^{-1} K^T W z.
    pub fn alpha_rwls(&self, weight: &Weight, gamma: f64) -> Result<RVec> {
        let solver = crate::estimators::NormalSolver::build(&self.k, weight, gamma)?;
        let rhs = self.k.entries().transpose() * weight.scale_vec(&self.z);
        Ok(solver.solve_vec(&rhs))
    }

    /// Lift reduced coordinates back: theta = Q^T [beta1; alpha].
    pub fn lift(&self, alpha: &RVec) -> RVec {
        let n = alpha.len() + 1;
        let mut stacked = RVec::zeros(n);
        stacked[0] = self.beta1;
        stacked.rows_mut(1, n - 1).copy_from(alpha);
        self.rotation.apply_transpose(&stacked)
    }

    /// The reduced coordinates of a full parameter vector (rows 2.. of
    /// Q theta).
    pub fn alpha_from_theta(&self, theta: &RVec) -> RVec {
        let rotated = self.rotation.apply(theta);
        rotated.rows(1, rotated.len() - 1).into_owned()
    }
}

/// Scaled information matrices of the two coordinate systems:
/// Sigma = K^T diag(1/(p - p^2)) K on the free block and
/// Upsilon = A^T diag(1/(p - p^2)) A on the full block. Both are the
/// n-independent parts of the inverse-variance Gram matrices,
/// K^T W K = n Sigma and A^T W A = n Upsilon.
#[derive(Debug, Clone)]
pub struct AsymptoticMatrices {
    pub sigma: RMat,
    pub upsilon: RMat,
}

pub fn asymptotic_matrices(
    a: &DesignMatrix,
    model: &ReducedModel,
    p: &RVec,
) -> Result<AsymptoticMatrices> {
    // 1/(p - p^2) is the n = 1 inverse-variance weight.
    let w = Weight::Diag(weight_matrix_true(p, 1)?);
    let wk = w.scale_rows(model.k.entries());
    let sigma = model.k.entries().transpose() * wk;
    let wa = w.scale_rows(a.entries());
    let upsilon = a.entries().transpose() * wa;
    Ok(AsymptoticMatrices { sigma, upsilon })
}

impl AsymptoticMatrices {
    /// S(gamma, n) = (Sigma + (gamma/n) I)^{-1}, factored fresh per call.
    pub fn s_of(&self, gamma: f64, n: u64) -> Result<RMat> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma = {gamma} must be finite and >= 0"
            )));
        }
        let m = self.sigma.nrows();
        let mut shifted = self.sigma.clone();
        let shift = gamma / n as f64;
        for i in 0..m {
            shifted[(i, i)] += shift;
        }
        let chol = Cholesky::new(shifted).ok_or_else(|| {
            Error::SingularSystem(
                "Sigma + (gamma/n) I is not positive definite; the reduced design may be rank-deficient at gamma = 0".into(),
            )
        })?;
        Ok(chol.inverse())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{crwls, EstimatorKind, RegressionProblem};
    use crate::linalg::{decompose, DensityMatrix, HermitianBasis};
    use crate::measurement::{design_matrix, probabilities, weight_matrix_true};
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn fixture() -> (DesignMatrix, RVec, RVec, RVec) {
        let basis = HermitianBasis::pauli(1).unwrap();
        let povm = crate::estimators::tests::six_vector_povm();
        let a = design_matrix(&povm, &basis).unwrap();
        let ket = DVector::from_vec(vec![crate::linalg::c(0.6, 0.0), crate::linalg::c(0.0, 0.8)]);
        let rho = DensityMatrix::from_pure(&ket).unwrap();
        let theta = decompose(&rho, &basis).unwrap();
        let (p, _) = probabilities(&a, &theta).unwrap();
        (a, basis.trace_vector().clone(), theta.coords, p)
    }

    #[test]
    fn aligned_trace_vector_gives_identity_q() {
        // Exactly normalizable leading entry: Q must be the identity bitwise.
        let t = RVec::from_vec(vec![2.0, 0.0, 0.0, 0.0]);
        let q = build_q(&t).unwrap().matrix();
        assert_eq!(q, RMat::identity(4, 4));
        // Irrational norm: still the identity to machine precision.
        let t = RVec::from_vec(vec![2.0f64.sqrt(), 0.0, 0.0, 0.0]);
        let q = build_q(&t).unwrap().matrix();
        assert!((q - RMat::identity(4, 4)).amax() < 1e-15);
    }

    #[test]
    fn householder_q_is_orthogonal_with_unit_trace_row() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..40 {
            let n = rng.gen_range(2..20);
            let t = RVec::from_fn(n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            if t.norm() < 1e-3 {
                continue;
            }
            let rot = build_q(&t).unwrap();
            let q = rot.matrix();
            assert!((&q * q.transpose() - RMat::identity(n, n)).amax() < 1e-13);
            assert!((q.row(0).transpose() - &t / t.norm()).amax() < 1e-13);
            // Implicit application agrees with the dense matrix.
            let x = RVec::from_fn(n, |_, _| rng.gen::<f64>());
            assert!((rot.apply(&x) - &q * &x).amax() < 1e-13);
            assert!((rot.apply_transpose(&x) - q.transpose() * &x).amax() < 1e-13);
        }
    }

    #[test]
    fn negative_leading_component_branch() {
        let t = RVec::from_vec(vec![-1.0, 0.5, 0.25]);
        let q = build_q(&t).unwrap().matrix();
        assert!((&q * q.transpose() - RMat::identity(3, 3)).amax() < 1e-14);
        assert!((q.row(0).transpose() - &t / t.norm()).amax() < 1e-14);
    }

    #[test]
    fn noiseless_reduction_is_consistent() {
        let (a, t, theta, p) = fixture();
        let model = ReducedModel::new(&a, &p, &t).unwrap();
        let alpha = model.alpha_from_theta(&theta);
        // z = K alpha exactly when y carries no noise.
        assert!((&model.z - model.k.entries() * &alpha).amax() < 1e-12);
        // Norm split |theta|^2 = beta1^2 + |alpha|^2.
        assert_abs_diff_eq!(
            theta.norm_squared(),
            model.beta1 * model.beta1 + alpha.norm_squared(),
            epsilon = 1e-12
        );
        // Lifting the exact alpha returns theta.
        assert!((model.lift(&alpha) - &theta).amax() < 1e-12);
    }

    #[test]
    fn maximally_mixed_state_has_zero_alpha() {
        let basis = HermitianBasis::pauli(1).unwrap();
        let rho = DensityMatrix::maximally_mixed(2);
        let theta = decompose(&rho, &basis).unwrap();
        let povm = crate::estimators::tests::six_vector_povm();
        let a = design_matrix(&povm, &basis).unwrap();
        let (p, _) = probabilities(&a, &theta).unwrap();
        let model = ReducedModel::new(&a, &p, basis.trace_vector()).unwrap();
        assert!(model.alpha_from_theta(&theta.coords).amax() < 1e-14);
    }

    #[test]
    fn lifted_ridge_estimate_matches_constrained_estimator() {
        let (a, t, _, p) = fixture();
        let n = 400u64;
        let w = Weight::Diag(weight_matrix_true(&p, n).unwrap());
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for &gamma in &[0.0, 0.05, 1.0, 30.0] {
            let y = RVec::from_fn(6, |i, _| p[i] + 0.05 * (rng.gen::<f64>() - 0.5));
            let model = ReducedModel::new(&a, &y, &t).unwrap();
            let alpha = model.alpha_rwls(&w, gamma).unwrap();
            let lifted = model.lift(&alpha);
            let direct = crwls(
                &RegressionProblem::new(&a, &t, &y)
                    .with_weight(w.clone())
                    .with_gamma(gamma),
            )
            .unwrap();
            assert!(
                (lifted - direct.theta_hat.coords).amax() < 1e-11,
                "lift mismatch at gamma = {gamma}"
            );
        }
        let _ = EstimatorKind::Crwls;
    }

    #[test]
    fn with_q_rejects_bad_completions() {
        let (a, t, _, p) = fixture();
        let not_orth = RMat::from_fn(4, 4, |i, j| if i == j { 1.1 } else { 0.0 });
        assert!(ReducedModel::with_q(&a, &p, &t, not_orth).is_err());
        // Orthogonal but wrong first row.
        let mut wrong_row = RMat::identity(4, 4);
        wrong_row.swap_rows(0, 1);
        assert!(ReducedModel::with_q(&a, &p, &t, wrong_row).is_err());
        // The Householder matrix itself passes.
        let q = build_q(&t).unwrap().matrix();
        assert!(ReducedModel::with_q(&a, &p, &t, q).is_ok());
    }

    #[test]
    fn asymptotic_matrices_relate_through_q() {
        let (a, t, _, p) = fixture();
        let model = ReducedModel::new(&a, &p, &t).unwrap();
        let asym = asymptotic_matrices(&a, &model, &p).unwrap();
        // Q Upsilon Q^T restricted to the free block is Sigma.
        let q = model.rotation.matrix();
        let rotated = &q * &asym.upsilon * q.transpose();
        let block = rotated.view((1, 1), (3, 3)).into_owned();
        assert!((block - &asym.sigma).amax() < 1e-11);
        // n scaling: K^T W K = n Sigma.
        let n = 250u64;
        let w = Weight::Diag(weight_matrix_true(&p, n).unwrap());
        let gram = model.k.entries().transpose() * w.scale_rows(model.k.entries());
        assert!((gram / n as f64 - &asym.sigma).amax() < 1e-9);
        // s_of inverts the shifted matrix.
        let s = asym.s_of(2.0, n).unwrap();
        let mut shifted = asym.sigma.clone();
        for i in 0..3 {
            shifted[(i, i)] += 2.0 / n as f64;
        }
        assert!((s * shifted - RMat::identity(3, 3)).amax() < 1e-10);
    }
}
