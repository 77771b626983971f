use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid nifti file: {0}")]
    Nifti(String),
    #[error("unsupported rank: dim[0] = {0}, expected 3")]
    UnsupportedRank(i16),
    #[error("unsupported nifti datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("invalid volume format: {0}")]
    Format(String),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("invalid label value {value} at voxel {index}; expected one of 0, 1, 2, 4")]
    InvalidLabel { value: u8, index: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty brain mask")]
    EmptyBrainMask,
    #[error("zero variance over brain voxels")]
    ZeroVariance,
    #[error("case {case_id}: sampling policy requests tumor-centered patches but the case has no tumor voxels")]
    NoTumor { case_id: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
