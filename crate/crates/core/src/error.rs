use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("enumeration too large: {count} configurations exceed the cap of {cap}")]
    EnumerationTooLarge { count: String, cap: u64 },
    #[error("exact mode required")]
    ExactModeRequired,
    #[error("{0} out of range")]
    OutOfRange(String),
    #[error("degenerate mark {0}: second moment below 1e-14")]
    DegenerateMark(usize),
    #[error("support has repeated or unordered times")]
    BadSupport,
    #[error("center first: L^-1 needs a centered functional (mean {0})")]
    CenterFirst(f64),
    #[error("process is not predictable at t={0}")]
    NotPredictable(usize),
    #[error("mark space has {0} marks, exactly one is required")]
    MarkSpaceSize(usize),
    #[error("mean mismatch: E[F] = {got}, expected {expected}")]
    MeanMismatch { got: f64, expected: f64 },
    #[error("unsupported functional form: {0}")]
    UnsupportedForm(String),
    #[error("negative pmf entry {0}")]
    NegativePmf(f64),
    #[error("singular truncated system")]
    Singular,
    #[error("functionals live on different spaces")]
    SpaceMismatch,
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
