use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("no hand present in frame")]
    NoHandsPresent,
    #[error("hand scale {0} is below the degenerate-scale threshold")]
    DegenerateScale(f64),
    #[error("class {0} has zero samples")]
    ZeroClassCount(usize),
    #[error("input is not sorted by timestamp")]
    UnsortedInput,
    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("batch normalization in training mode needs a batch of at least 2, got {0}")]
    DegenerateBatch(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("need at least {needed} recordings for {needed}-fold split, got {got}")]
    TooFewRecordings { needed: usize, got: usize },
    #[error("no frames processed")]
    NoFramesProcessed,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("reference text is empty")]
    EmptyReference,
    #[error("unsupported character {0:?}")]
    UnsupportedCharacter(char),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
