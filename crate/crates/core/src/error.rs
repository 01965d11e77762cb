use crate::tensor::TensorError;
use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("code length {got} does not match the expected {expected}")]
    CodeLength { expected: usize, got: usize },

    #[error("degenerate code: norm {norm:e} is below 1e-12")]
    DegenerateCode { norm: f64 },

    #[error("interpolation weight {0} is outside [0, 1]")]
    WeightRange(f64),

    #[error("image dimensions {left:?} and {right:?} differ")]
    ImageDims {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("patch size {patch} does not fit a {height}×{width} image")]
    EmptyTiling {
        patch: usize,
        height: usize,
        width: usize,
    },

    #[error("image {height}×{width} is smaller than the {window}×{window} window")]
    ImageTooSmall {
        height: usize,
        width: usize,
        window: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid scene: {0}")]
    Scene(String),

    #[error("training diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: u64, reason: String },

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Dataset ingestion failures. Each names the offending entry.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("{entry}: file not found")]
    MissingFile { entry: String },
    #[error("{entry}: {width}×{height} differs from the dataset's {expected_width}×{expected_height}")]
    DimensionMismatch {
        entry: String,
        width: usize,
        height: usize,
        expected_width: usize,
        expected_height: usize,
    },
    #[error("{entry}: unsupported bit depth {depth}")]
    UnsupportedBitDepth { entry: String, depth: u32 },
    #[error("{entry}: {reason}")]
    Decode { entry: String, reason: String },
    #[error("manifest {path}: {reason}")]
    Manifest { path: String, reason: String },
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic {0:?}, not a checkpoint")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checkpoint is malformed: {0}")]
    Malformed(String),
    #[error("configuration hash mismatch: the checkpoint was written under a different configuration")]
    ConfigHash,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
