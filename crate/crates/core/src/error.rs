use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown domain label {label} (model has {domains} domains)")]
    Domain { label: usize, domains: usize },
    #[error("non-finite gradient at Langevin step {step}")]
    NonFiniteGradient { step: usize },
    #[error("non-finite {component} loss at training step {step}")]
    NonFiniteLoss { component: &'static str, step: u64 },
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
