use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("malformed binary data at byte offset {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("requested {requested} items but only {available} are available")]
    KTooLarge { requested: usize, available: usize },

    #[error("degenerate neighborhood around point {index}")]
    DegenerateNeighborhood { index: usize },

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("column count mismatch: {left} vs {right}")]
    ColsMismatch { left: usize, right: usize },

    #[error("solver produced a non-finite iterate after {iterations} iterations")]
    SolverDiverged { iterations: usize },

    #[error("at least 4 anchors are required, got {0}")]
    TooFewAnchors(usize),

    #[error("anchors are not in general position (smallest singular value {sigma_min:e}, diameter {diameter:e})")]
    DegenerateAnchors { sigma_min: f64, diameter: f64 },

    #[error("external predictor failed (exit code {code:?}): {diagnostics}")]
    ExternalFailed {
        code: Option<i32>,
        diagnostics: String,
    },

    #[error("external predictor output rejected: {0}")]
    BadExternalOutput(String),

    #[error("removing {removed} of {total} points leaves nothing")]
    TooFewRemaining { removed: usize, total: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
