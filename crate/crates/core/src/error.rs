use std::fmt;
use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the response, distillation, selection, detector, and
/// harness layers.
#[derive(Debug)]
pub enum Error {
    /// A value or combination of values violates an operation precondition.
    InvalidArgument(String),
    /// Tensors or maps that must agree in shape do not.
    ShapeMismatch(String),
    /// A serialized stream does not start with the expected magic bytes.
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    /// A serialized stream declares a format version this reader rejects.
    UnsupportedVersion { expected: u16, found: u16 },
    /// A serialized stream ended before the declared payload was complete.
    Truncated { context: &'static str },
    /// An I/O failure, annotated with the path involved when known.
    Io {
        path: Option<PathBuf>,
        source: std::io::Error,
    },
    /// Training produced a non-finite loss and was aborted.
    Diverged { epoch: usize, scene: usize, loss: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::BadMagic { expected, found } => write!(
                f,
                "bad magic bytes: expected {:?}, found {:?}",
                String::from_utf8_lossy(expected),
                found
            ),
            Error::UnsupportedVersion { expected, found } => {
                write!(f, "unsupported format version {found} (reader supports {expected})")
            }
            Error::Truncated { context } => {
                write!(f, "truncated payload while reading {context}")
            }
            Error::Io { path, source } => match path {
                Some(p) => write!(f, "i/o error on {}: {source}", p.display()),
                None => write!(f, "i/o error: {source}"),
            },
            Error::Diverged { epoch, scene, loss } => write!(
                f,
                "training diverged at epoch {epoch}, scene {scene}: total loss {loss}"
            ),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: Some(path.into()),
            source,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(source: std::io::Error) -> Self {
        Error::Io { path: None, source }
    }
}
