use acoustic_sim::SimError;
use dsp_features::FeatureError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MultilatError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("ranges are inconsistent: worst range residual {residual:.3e} m")]
    NoSolution { residual: f64 },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub type MultilatResult<T> = Result<T, MultilatError>;
