use thiserror::Error;

/// Errors surfaced by the library. Constructors validate geometry and shapes
/// up front so the numeric kernels can stay panic- and check-free.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid frequency: {0}")]
    InvalidFrequency(String),

    #[error("optimization diverged at step {step}: loss is not finite")]
    Diverged { step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
