//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or vector shapes do not line up.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// An intermediate value became NaN or infinite.
    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    /// A parameter is outside its allowed range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An indicator code references an atom outside the codebook.
    #[error("atom index {index} out of range (stage {stage}, {atoms} atoms)")]
    AtomOutOfRange {
        stage: usize,
        index: usize,
        atoms: usize,
    },

    /// A label entry is not 0 or 1.
    #[error("label entry {value} at ({row}, {col}) is not 0 or 1")]
    LabelDomain { row: usize, col: usize, value: f64 },

    /// An item has no label at all.
    #[error("item {0} has no label")]
    UnlabeledItem(usize),

    /// A training step failed; carries the outer-iteration context.
    #[error("training iteration {iteration}, {step} step: {source}")]
    Training {
        iteration: usize,
        step: &'static str,
        source: Box<Error>,
    },

    /// Encoding failed for a specific database column.
    #[error("encoding column {column}: {source}")]
    Encoding { column: usize, source: Box<Error> },

    /// A file could not be read or written.
    #[error("{context} ({path}): {source}")]
    Io {
        context: &'static str,
        path: String,
        source: std::io::Error,
    },

    /// A dataset or model file violates its format.
    #[error("bad file format: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn dimension(
        context: &'static str,
        expected: impl Into<String>,
        actual: impl Into<String>,
    ) -> Self {
        Error::Dimension {
            context,
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub(crate) fn io(context: &'static str, path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            context,
            path: path.display().to_string(),
            source,
        }
    }
}
