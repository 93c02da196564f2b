use std::fmt;

/// A single violated field found while validating a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("matrix is singular or not positive definite: {0}")]
    NotPositiveDefinite(&'static str),
    #[error("linear program failed: {0}")]
    LinearProgram(String),
    #[error("sinkhorn did not converge after {iterations} iterations (marginal error {marginal_error:e})")]
    NotConverged {
        iterations: usize,
        marginal_error: f64,
    },
    #[error("configuration error: {}", format_violations(.0))]
    Config(Vec<Violation>),
    #[error("bad magic number {found:#010x} at offset {offset}")]
    BadMagic { offset: usize, found: u32 },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("dimension overflow in header: {0}")]
    DimensionOverflow(String),
    #[error("corrupt archive: {0}")]
    Corrupt(String),
    #[error("manifest mismatch on `{field}`: expected {expected}, found {found}")]
    ManifestMismatch {
        field: &'static str,
        expected: String,
        found: String,
    },
    #[error("config hash mismatch: {0} vs {1}")]
    HashMismatch(String, String),
    #[error("serialization: {0}")]
    Serialization(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    /// Short machine-readable tag used on the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Empty(_) => "empty",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::LinearProgram(_) => "linear_program",
            Error::NotConverged { .. } => "not_converged",
            Error::Config(_) => "config",
            Error::BadMagic { .. } => "bad_magic",
            Error::Truncated { .. } => "truncated",
            Error::DimensionOverflow(_) => "dimension_overflow",
            Error::Corrupt(_) => "corrupt",
            Error::ManifestMismatch { .. } => "manifest_mismatch",
            Error::HashMismatch(..) => "hash_mismatch",
            Error::Serialization(_) => "serialization",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
