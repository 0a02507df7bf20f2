use thiserror::Error;

/// Errors raised by tensor kernels, solvers and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mode {mode} out of range for a {order}-way tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid shape {0:?}: need at least one mode and every dimension >= 1")]
    InvalidShape(Vec<usize>),

    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("invalid multilinear ranks {ranks:?} for shape {shape:?}")]
    InvalidRanks {
        shape: Vec<usize>,
        ranks: Vec<usize>,
    },

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("singular value decomposition did not converge")]
    SvdFailed,

    #[error("conjugate gradient diverged (relative residual {residual:e})")]
    CgDiverged { residual: f64 },

    #[error("infeasible dual variable: {0}")]
    Infeasible(String),

    #[error("invalid classification label {0}: expected -1 or +1")]
    InvalidLabel(f64),

    #[error("Newton step could not keep the iterate interior")]
    NewtonFailure,

    #[error("latent norm evaluation did not converge (value {value}, residual {residual:e})")]
    LatentNormNotConverged { value: f64, residual: f64 },

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of a numerical routine (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite
                | Error::SvdFailed
                | Error::CgDiverged { .. }
                | Error::NewtonFailure
                | Error::LatentNormNotConverged { .. }
                | Error::Degenerate(_)
        )
    }
}
