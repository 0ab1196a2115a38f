//! Error type shared by all modules.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, QpError>;

/// Everything that can go wrong between state construction and moment extraction.
#[derive(Debug, Error)]
pub enum QpError {
    /// Matrix or vector dimensions do not match the declared Hilbert space.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A matrix required to be Hermitian is not, beyond tolerance.
    #[error("not Hermitian: max deviation {dev:.3e} exceeds tolerance {tol:.1e}")]
    NotHermitian { dev: f64, tol: f64 },

    /// A matrix fails the density-operator invariants (unit trace, positivity).
    #[error("not a density operator: {0}")]
    NotDensity(String),

    /// A physical parameter is out of range (negative mean occupation, zero truncation, ...).
    #[error("bad parameter: {0}")]
    BadParameter(String),

    /// State weight lost to the truncated Fock tail exceeds the allowed leakage.
    #[error("truncation leak: {0}")]
    TruncationLeak(String),

    /// A series has the wrong provenance for the requested operation
    /// (for example sampling an already-sampled series).
    #[error("bad provenance: {0}")]
    BadProvenance(String),

    /// A decay or dephasing rate is negative.
    #[error("negative rate: {0}")]
    NegativeRate(String),

    /// The fixed-step integrator failed its step-halving convergence check.
    #[error("integrator step not converged: {0}")]
    StepNotConverged(String),

    /// A dense numerical routine (eigensolver, factorization) broke down.
    #[error("numerical routine failed: {0}")]
    Numerics(String),

    /// Too few grid points inside the requested fit window.
    #[error("window too small: {0}")]
    WindowTooSmall(String),

    /// The least-squares design matrix is numerically rank deficient.
    #[error("ill-conditioned fit: {0}")]
    IllConditionedFit(String),

    /// A grid required to be symmetric about tau = 0 is not.
    #[error("asymmetric grid: {0}")]
    AsymmetricGrid(String),

    /// A quantity that must be real came out with a large imaginary residue.
    #[error("non-real result: imaginary residue {residue:.3e} exceeds {tol:.1e}")]
    NonRealResult { residue: f64, tol: f64 },

    /// The derivative method cannot consume the given source kind
    /// (grid methods need a gridded series, step methods need an evaluable curve).
    #[error("source mismatch: {0}")]
    SourceMismatch(String),

    /// Scenario file failed validation.
    #[error("scenario validation: {0}")]
    Validation(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
