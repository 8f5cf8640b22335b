use thiserror::Error;

pub type Result<T, E = OdfError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum OdfError {
    #[error("degenerate cloud: {0}")]
    DegenerateCloud(String),

    #[error("cloud has {got} points, need at least {need}")]
    TooFewPoints { got: usize, need: usize },

    #[error("k = {k} must be smaller than the cloud size {size}")]
    KTooLarge { k: usize, size: usize },

    #[error("point index {index} out of range for {size} points")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("tessellation level {0} not supported (expected 0, 1 or 2)")]
    BadLevel(u32),

    #[error("invalid cone bank: {0}")]
    BadConeBank(String),

    #[error("degenerate frame: {0}")]
    DegenerateFrame(String),

    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("{path}: byte offset {offset}: {msg}")]
    Format { path: String, offset: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
