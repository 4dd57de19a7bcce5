use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("entropy model mode mismatch: model is {model}, call expected {requested}")]
    ModeMismatch { model: String, requested: String },

    #[error("non-positive likelihood {0} in rate computation")]
    NonPositiveLikelihood(f32),

    #[error("image too small: {0}")]
    ImageTooSmall(String),

    #[error("invalid attack specification: {0}")]
    InvalidAttack(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unsupported image format at {path}: {reason}")]
    UnsupportedImage { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::ModeMismatch { .. } => "mode_mismatch",
            Error::NonPositiveLikelihood(_) => "non_positive_likelihood",
            Error::ImageTooSmall(_) => "image_too_small",
            Error::InvalidAttack(_) => "invalid_attack",
            Error::Dataset(_) => "dataset",
            Error::Diverged { .. } => "diverged",
            Error::Checkpoint(_) => "checkpoint",
            Error::Architecture(_) => "architecture",
            Error::Config(_) => "config",
            Error::UnsupportedImage { .. } => "unsupported_image",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Image(_) => "image",
        }
    }
}
