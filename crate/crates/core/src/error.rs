use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {0:?}: extents must be >= 1 and rank >= 1")]
    InvalidShape(Vec<usize>),

    #[error("cannot reshape {from:?} ({from_count} elements) into {to:?} ({to_count} elements)")]
    ElementCount {
        from: Vec<usize>,
        from_count: usize,
        to: Vec<usize>,
        to_count: usize,
    },

    #[error("shape {shape:?} holds {expected} elements but {actual} values were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: domain error at value {value}")]
    Domain { op: &'static str, value: f64 },

    #[error("{0}: input contains non-finite values")]
    NonFinite(&'static str),

    #[error("singular value spectrum is identically zero (dead layer)")]
    DeadLayer,

    #[error("statistic undefined: {0}")]
    UndefinedStatistic(&'static str),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("non-finite loss at epoch {epoch}, step {step}\n{spectra}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        spectra: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
