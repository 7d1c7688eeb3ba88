use alloc::string::String;
use core::fmt;

/// Errors raised by the numerical core.
///
/// Each variant carries enough context to produce a one-line diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not fit the operation.
    Shape { op: &'static str, detail: String },
    /// An argument violates a documented precondition.
    Invalid { what: &'static str, detail: String },
    /// A gradient was requested that was never populated.
    MissingGrad { param: String },
    /// A required per-frame input (maps, checkpoint) is absent.
    Missing { what: &'static str, id: String },
    /// A matrix that must be invertible is (numerically) singular.
    Singular { what: &'static str },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "shape mismatch in {op}: {detail}"),
            Error::Invalid { what, detail } => write!(f, "invalid {what}: {detail}"),
            Error::MissingGrad { param } => write!(f, "parameter `{param}` has no gradient"),
            Error::Missing { what, id } => write!(f, "missing {what} for `{id}`"),
            Error::Singular { what } => write!(f, "singular matrix in {what}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
