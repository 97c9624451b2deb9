use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid weight vector: {0}")]
    InvalidWeights(String),

    #[error("invalid evaluation matrix: {0}")]
    InvalidEvalMatrix(String),

    #[error("invalid strategy profile: {0}")]
    InvalidProfile(String),

    #[error("invalid population state: {0}")]
    InvalidState(String),

    #[error("need at least {needed} models, got {got}")]
    TooFewModels { needed: usize, got: usize },

    #[error("index {index} out of range for {len} players")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("game with {k} players is too large to enumerate (max {max})")]
    GameTooLarge { k: usize, max: usize },

    #[error("fitness shift too small: shifted fitness {fitness} is not positive")]
    InsufficientShift { fitness: f64 },

    #[error("step size {tau} drives population {population} negative")]
    StepTooLarge { tau: f64, population: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("infeasible partition: {0}")]
    InfeasiblePartition(String),

    #[error("idx format: {0}")]
    Idx(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
