use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("architecture does not compose: {0}")]
    Composition(String),
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("layer `{0}` has no parameters")]
    NoParameters(String),
    #[error("statistic undefined: {0}")]
    Degenerate(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("backward cache does not match layer `{0}`")]
    CacheMismatch(String),
}

/// Shorthand for building a formatted [`Error::Shape`].
macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(alloc::format!($($arg)*)) };
}

macro_rules! invalid {
    ($($arg:tt)*) => { $crate::error::Error::InvalidArgument(alloc::format!($($arg)*)) };
}

pub(crate) use invalid;
pub(crate) use shape_err;
