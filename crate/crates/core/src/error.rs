use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported image format in {path}: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("corrupt image data in {path}: {detail}")]
    CorruptData { path: PathBuf, detail: String },
    #[error("cannot write {path}: {detail}")]
    Unwritable { path: PathBuf, detail: String },

    #[error("expected channels {expected:?}, found {found:?}")]
    ChannelLayout {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("extent mismatch: expected {expected:?}, found {found:?}")]
    ExtentMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("feature length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("patch at ({x}, {y}) of width {width} lies outside a {image_width}x{image_height} image")]
    PatchOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        image_width: usize,
        image_height: usize,
    },
    #[error("cannot build an index from zero features")]
    EmptyIndex,
    #[error("k = {k} is outside 1..={len}")]
    KOutOfRange { k: usize, len: usize },
    #[error("unequal total mass: {a} vs {b}")]
    UnequalMass { a: f64, b: f64 },
    #[error("patch width {width} too large for exact EMD (max {max})")]
    PatchTooLarge { width: usize, max: usize },
    #[error("overlap region has no {0} constrained pixels")]
    EmptyConstraintSet(&'static str),
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
