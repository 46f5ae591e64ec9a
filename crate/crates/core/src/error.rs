use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two extents that must agree do not.
    #[error("{op}: dimension mismatch on {axis} ({left} vs {right})")]
    DimMismatch {
        op: &'static str,
        axis: String,
        left: usize,
        right: usize,
    },
    #[error("{op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("step {step} outside valid range {lo}..={hi}")]
    StepOutOfRange { step: usize, lo: usize, hi: usize },
    #[error("unknown sensor type `{name}` (known sensors: {})", known.join(", "))]
    UnknownSensor { name: String, known: Vec<String> },
    #[error("unknown sensor profile `{0}`")]
    UnknownProfile(String),
    #[error("dips-advanced sampling requires a one-step (psi) parameter table")]
    MissingPsi,
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("file {} not found", .0.display())]
    MissingFile(PathBuf),
    #[error("malformed {what} in {}: {detail}", path.display())]
    Malformed {
        what: &'static str,
        path: PathBuf,
        detail: String,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, axis: impl Into<String>, left: usize, right: usize) -> Self {
        Error::DimMismatch {
            op,
            axis: axis.into(),
            left,
            right,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem rather than by invalid input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::MissingFile(_))
    }
}
