use std::path::PathBuf;

use crate::ontology::ValidationReport;

/// Errors produced by the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown concept id `{0}`")]
    UnknownConcept(String),

    #[error("unknown instance id `{0}`")]
    UnknownInstance(String),

    #[error("invalid ontology: {0}")]
    Validation(ValidationReport),

    #[error("invalid parameters: {0}")]
    Parameter(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("cannot encode an empty token sequence")]
    EmptyEncoding,

    #[error("dimension mismatch: {left} vs {right}")]
    Shape { left: usize, right: usize },

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("need at least two common concepts, found {found}")]
    InsufficientConcepts { found: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("seed {seed}, strategy {strategy}: {source}")]
    Cell {
        seed: u64,
        strategy: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
