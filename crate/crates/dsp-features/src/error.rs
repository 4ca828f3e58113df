use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("pair alignment error: {0}")]
    Alignment(String),
    #[error("invalid filter bank: {0}")]
    InvalidFilterBank(String),
}

pub type FeatureResult<T> = Result<T, FeatureError>;
