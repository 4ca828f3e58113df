use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid room: {0}")]
    InvalidRoom(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("scene sampling failed: {0}")]
    Sampling(String),
    #[error("dataset format error: {0}")]
    Format(String),
    #[error("dataset format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checksum mismatch in record {record}: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch {
        record: usize,
        stored: u32,
        computed: u32,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type SimResult<T> = Result<T, SimError>;
