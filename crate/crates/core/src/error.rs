use std::fmt;
use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug)]
pub enum Error {
    /// Operand shapes do not conform for the named operation.
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A forward operation produced NaN or infinity.
    NonFinite { op: &'static str },
    /// Backward or a gradient check was asked to differentiate a non-scalar.
    NotScalar { shape: Vec<usize> },
    InvalidArgument(String),
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    Config(String),
    /// Training produced a non-finite loss or gradient.
    Diverged(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Short machine-parsable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite { .. } => "non-finite",
            Error::NotScalar { .. } => "not-scalar",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Config(_) => "config",
            Error::Diverged(_) => "diverged",
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            Error::NonFinite { op } => write!(f, "{op}: produced a non-finite value"),
            Error::NotScalar { shape } => {
                write!(f, "expected a scalar, got a tensor of shape {shape:?}")
            }
            Error::InvalidArgument(msg) => write!(f, "{msg}"),
            Error::Parse { path, line, msg } => {
                write!(f, "{}:{line}: {msg}", path.display())
            }
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Error::Config(msg) => write!(f, "config: {msg}"),
            Error::Diverged(msg) => write!(f, "training diverged: {msg}"),
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

pub type Result<T> = std::result::Result<T, Error>;
