use thiserror::Error;

/// Errors shared across the trajectory stack.
#[derive(Debug, Error)]
pub enum TrajError {
    /// Query time outside the trajectory's domain.
    #[error("time {t} outside trajectory domain [{t_start}, {t_end}]")]
    TimeOutOfRange { t: f64, t_start: f64, t_end: f64 },

    /// A piece or segment duration that is zero, negative, or non-finite.
    #[error("duration must be positive and finite, got {duration}")]
    InvalidDuration { duration: f64 },

    /// Banded LU hit a (numerically) zero pivot.
    #[error("factorization breakdown: zero pivot at column {pivot}")]
    SingularSystem { pivot: usize },

    /// An argument with the wrong shape for the operation.
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Net thrust too small to define an attitude (free fall).
    #[error("thrust vector norm {norm:.3e} below {min:.1e}; attitude undefined")]
    DegenerateThrust { norm: f64, min: f64 },

    /// Objective evaluated to NaN/inf at the given optimizer iteration.
    #[error("objective non-finite at iteration {iteration}")]
    NonFiniteCost { iteration: usize },

    /// Every topology candidate violated the feasibility filter.
    #[error("no feasible topology candidate; per-candidate max violations: {summary}")]
    NoFeasibleCandidate { summary: String },

    /// A structurally invalid configuration value.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Failure writing exported data.
    #[error("export failed: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrajError>;
