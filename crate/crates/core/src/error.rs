use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid too small: {0}")]
    Size(String),

    #[error("extent mismatch: expected {expected:?}, got {got:?}")]
    ExtentMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("mask has no observed pixels")]
    EmptyObserved,

    #[error("disk around ({x}, {y}) with radius {rho} contains no interior pixel")]
    EmptyDisk { x: usize, y: usize, rho: f64 },

    #[error("PGM parse error at byte {offset}: {msg}")]
    Pgm { offset: usize, msg: String },

    #[error("unsupported image magic {0:?}")]
    UnsupportedMagic(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
