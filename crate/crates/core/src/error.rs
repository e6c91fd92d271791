use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("label {label} out of range for {classes} classes")]
    Index { label: usize, classes: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate geometry: UAV coincides with the base station")]
    DegenerateGeometry,
    #[error("normalization statistics have not been fitted")]
    NotFitted,
    #[error("{field} expects {expected} values, got {got}")]
    Arity {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("modalities must follow the order Img, GPS, HD, Pos")]
    ModalityOrder,
    #[error("contrastive alignment needs at least 2 samples per batch, got {got}")]
    InsufficientBatch { got: usize },
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    TrainingFailure { epoch: usize },
    #[error("variant {0} has no dynamic modality weights")]
    UnsupportedVariant(String),
    #[error("backward pass requires a single-element output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
