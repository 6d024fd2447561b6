//! Quantum state tomography by linear regression.
//!
//! The library covers the full pipeline: build an orthonormal Hermitian
//! operator basis, describe a POVM, turn the two into a real design matrix,
//! simulate measurement counts, and recover the state coordinates with a
//! family of least-squares estimators (plain, weighted, trace-constrained,
//! ridge-regularized, and their combinations). Every estimator comes with
//! its exact MSE matrix, and the `tuning` module selects the regularization
//! gain by risk minimization, by an unbiased data-driven surrogate, or by
//! the asymptotic closed form.

pub mod equiv;
pub mod estimators;
pub mod experiments;
pub mod linalg;
pub mod measurement;
pub mod seed;
pub mod tuning;

use std::path::PathBuf;

/// Numerical tolerances used by construction-time validation.
pub mod tol {
    /// Hermitian symmetry / imaginary-residue gate.
    pub const HERM: f64 = 1e-10;
    /// Basis orthonormality gate.
    pub const ORTH: f64 = 1e-10;
    /// Unit-trace gate for states and constrained estimates.
    pub const TRACE: f64 = 1e-9;
    /// Positive semidefiniteness slack (smallest eigenvalue bound).
    pub const PSD: f64 = 1e-8;
    /// POVM completeness gate on the Frobenius norm of sum(E) - I.
    pub const POVM: f64 = 1e-9;
    /// Default clamp applied to empirical probabilities before inversion.
    pub const EPS_CLAMP: f64 = 1e-8;
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not Hermitian (max asymmetry {0:.3e})")]
    NotHermitian(f64),
    #[error("operator set is not orthonormal (max deviation {0:.3e})")]
    NotOrthonormal(f64),
    #[error("not a density matrix: {0}")]
    NotDensityMatrix(String),
    #[error("effect {index} is not positive semidefinite (min eigenvalue {min_eig:.3e})")]
    EffectNotPsd { index: usize, min_eig: f64 },
    #[error("POVM flagged complete but effects sum to I with error {0:.3e}")]
    IncompletePovm(f64),
    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("degenerate probability at index {index}: p = {value}")]
    DegenerateProbability { index: usize, value: f64 },
    #[error("degenerate state: {0}")]
    DegenerateState(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures of the numerics (as opposed to bad inputs/config).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient(_)
                | Error::SingularSystem(_)
                | Error::DegenerateProbability { .. }
                | Error::DegenerateState(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
