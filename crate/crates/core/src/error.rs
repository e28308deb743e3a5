use std::path::PathBuf;

/// Errors raised by the solver library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("conductivity must be strictly positive: entry {index} is {value}")]
    EllipticityViolation { index: usize, value: f64 },

    #[error("degenerate pivot {pivot:e} at row {row} during tridiagonal elimination")]
    DegeneratePivot { row: usize, pivot: f64 },

    #[error("length mismatch for {what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("non-finite objective encountered at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("need at least {needed} positive data points, found {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("no feasible reference control: {0}")]
    NoFeasibleReference(String),

    #[error("malformed scenario table at line {line}: {reason}")]
    ScenarioTable { line: usize, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            what,
            expected,
            found,
        })
    }
}
