use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid maze: {0}")]
    InvalidMaze(String),
    #[error("episode already finished at step {0}")]
    EpisodeDone(usize),
    #[error("cell ({0}, {1}) is not reachable")]
    Unreachable(usize, usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("normalized score undefined: expert score equals random score ({0})")]
    DegenerateScore(f64),
}

pub type Result<T> = core::result::Result<T, Error>;
