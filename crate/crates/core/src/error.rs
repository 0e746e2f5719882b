use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: &'static str },
    #[error("segment {0} is empty")]
    EmptySegment(usize),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("backward already ran on this tape; record a new forward pass first")]
    TapeConsumed,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("destination step without an origin node")]
    UndefinedOrigin,
    #[error("action {step} selects disallowed node {node}")]
    DisallowedAction { step: usize, node: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset error: {0}")]
    Dataset(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
