use std::io;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Variants carry the failing contract in their message; [`Error::module`]
/// names the subsystem that raised them, which the CLI reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("label map format: {0}")]
    MapFormat(String),
    #[error("colored label: {0}")]
    ColoredLabel(String),
    #[error("grid format: {0}")]
    GridFormat(String),
    #[error("label space mismatch: {0}")]
    SpaceMismatch(String),
    #[error("probabilities not normalized: {0}")]
    Normalization(String),
    #[error("pattern generation: {0}")]
    Generation(String),
    #[error("parameter out of range: {0}")]
    Param(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("checkpoint config mismatch: expected {expected}, found {found}")]
    ConfigMismatch { expected: String, found: String },
    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),
    #[error("evaluation: {0}")]
    Eval(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Name of the module whose contract was violated.
    pub fn module(&self) -> &'static str {
        match self {
            Error::MapFormat(_) | Error::ColoredLabel(_) | Error::GridFormat(_) => "labels",
            Error::SpaceMismatch(_) => "syntax",
            Error::Normalization(_) => "losses",
            Error::Generation(_) | Error::Param(_) => "synthgen",
            Error::Shape(_) | Error::ConfigMismatch { .. } | Error::CheckpointFormat(_) => "models",
            Error::Config(_) => "train",
            Error::Eval(_) => "eval",
            Error::Io(_) | Error::Json(_) | Error::Image(_) | Error::Csv(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
