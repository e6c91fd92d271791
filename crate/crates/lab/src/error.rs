use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("not a {expected} file (bad magic)")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {found}, this build reads version {supported}")]
    Version { found: u32, supported: u32 },
    #[error("file ends inside the header")]
    Truncated,
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("checkpoint holds variant {found}, expected {expected}")]
    VariantMismatch { found: String, expected: String },
    #[error(transparent)]
    Core(#[from] sam2b_core::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl LabError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        LabError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::VariantMismatch { .. } => 2,
            LabError::Core(e) => match e {
                sam2b_core::Error::TrainingFailure { .. } => 4,
                sam2b_core::Error::Config(_) | sam2b_core::Error::UnsupportedVariant(_) => 2,
                _ => 4,
            },
            LabError::Io { .. }
            | LabError::BadMagic { .. }
            | LabError::Version { .. }
            | LabError::Truncated
            | LabError::Checksum { .. }
            | LabError::Malformed(_)
            | LabError::Csv(_) => 3,
        }
    }
}
