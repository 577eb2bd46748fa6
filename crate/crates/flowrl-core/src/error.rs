use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("log of non-positive input: {value}")]
    LogNonPositive { value: f64 },
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("training diverged at step {step}: {diagnostic}")]
    TrainingDiverged { step: usize, diagnostic: String },
    #[error("enumeration too large: {trajectories} trajectories exceeds guard of {guard}")]
    EnumerationTooLarge { trajectories: u128, guard: u128 },
    #[error("{0}")]
    Invalid(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
