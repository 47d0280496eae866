use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {layer}: {detail}")]
    Dimension { layer: String, detail: String },

    #[error("batch normalization needs at least 2 samples in train mode, got {0}")]
    BatchTooSmall(usize),

    #[error("stale cache for layer {layer}: {detail}")]
    StaleCache { layer: usize, detail: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(layer: &str, detail: impl Into<String>) -> Error {
    Error::Dimension {
        layer: layer.to_string(),
        detail: detail.into(),
    }
}
