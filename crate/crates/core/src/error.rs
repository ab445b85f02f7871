use std::fmt;

/// Errors surfaced by the numeric core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An op was given operands whose shapes do not conform.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A backward pass was requested from a non-scalar root.
    NonScalarRoot { shape: Vec<usize> },
    /// A labeled operation was handed an unlabeled sample set.
    MissingLabels,
    /// An operation requiring stored latents was handed a set without them.
    MissingLatents,
    /// Two sample sets that must be equal-sized are not.
    SizeMismatch { left: usize, right: usize },
    /// A scalar argument was outside its admissible range.
    InvalidArgument(String),
    /// A NaN or infinity was detected where finite values are required.
    NumericFailure(String),
    /// A serialized artifact could not be parsed.
    Parse(String),
    /// Filesystem failure while reading or writing an artifact.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")
            }
            Error::NonScalarRoot { shape } => {
                write!(f, "backward root must be scalar, got shape {shape:?}")
            }
            Error::MissingLabels => write!(f, "sample set has no labels"),
            Error::MissingLatents => write!(f, "sample set has no stored latents"),
            Error::SizeMismatch { left, right } => {
                write!(f, "sample sets must be equal-sized: {left} vs {right}")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::NumericFailure(msg) => write!(f, "numeric failure: {msg}"),
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
            Error::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
