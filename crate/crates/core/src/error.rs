use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An input lies outside the domain on which a closed form holds.
    #[error("out of domain: {0}")]
    OutOfDomain(String),

    /// Data-dependent normalizer was zero or negative (possible after noising).
    #[error("non-positive normalizer Z = {z}")]
    NonPositiveNormalizer { z: f64 },

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid mode: {0}")]
    InvalidMode(String),

    #[error("invalid data: {0}")]
    InvalidData(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
