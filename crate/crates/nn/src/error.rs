use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("input dims {dims:?} must be divisible by {factor} (2^(depth_levels-1))")]
    Divisibility { dims: [usize; 3], factor: usize },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite {component} loss ({value})")]
    NonFinite { component: &'static str, value: f64 },
    #[error("bad model blob: {0}")]
    Blob(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, NnError>;
