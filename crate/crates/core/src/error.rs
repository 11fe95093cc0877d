use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("duplicate response for student {student}, item {item}, time {time}")]
    DuplicateResponse {
        student: String,
        item: String,
        time: String,
    },
    #[error("duplicate stimulus features for item {0}")]
    DuplicateFeature(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("covariate {0} is constant on the training data")]
    ConstantCovariate(&'static str),
    #[error("schema: {0}")]
    Schema(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("fit diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown effect {term}={level}")]
    UnknownEffect { term: String, level: String },
    #[error("zero-width confidence interval")]
    ZeroWidthInterval,
    #[error("not enough data: {0}")]
    NotEnoughData(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = core::result::Result<T, Error>;
