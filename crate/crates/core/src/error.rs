use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error class, used by the command-line tool to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("line {line}: malformed header: {reason}")]
    MalformedHeader { line: usize, reason: String },

    #[error("line {line}: expected {expected} fields, found {found}")]
    Arity {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: dangling reference: {reason}")]
    DanglingReference { line: usize, reason: String },

    #[error("line {line}: non-finite value {value:?}")]
    NonFinite { line: usize, value: String },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("infeasible split: class {class} has {size} members but {parts} parts were requested")]
    InfeasibleSplit {
        class: usize,
        size: usize,
        parts: usize,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("label space mismatch: {0}")]
    LabelSpaceMismatch(String),

    #[error("empty bag for patient {0}")]
    EmptyBag(u64),

    #[error("empty validation set")]
    EmptyValidation,

    #[error("empty evaluation: confusion matrix has no samples")]
    EmptyEvaluation,

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric input error: {0}")]
    NumericInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{}: {source}", path.display())]
    File {
        path: std::path::PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn file(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::File {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config { .. }
            | Error::InfeasibleSplit { .. }
            | Error::LabelSpaceMismatch(_)
            | Error::Shape(_) => ErrorKind::Config,
            Error::NumericInput(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}
