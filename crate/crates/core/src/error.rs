use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed record: {0}")]
    MalformedRecord(String),

    #[error("invalid dataset identifier {0:?}")]
    InvalidDatasetId(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("duplicate record for key ({dataset}, {doc_id}, {annotator_id})")]
    DuplicateRecord {
        dataset: String,
        doc_id: String,
        annotator_id: String,
    },

    #[error("label scale mismatch: {0}")]
    ScaleMismatch(String),

    #[error("no annotations support this aggregation")]
    NoSupport,

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("value outside the domain of the operation: {0}")]
    Domain(String),

    #[error("invalid correlation matrix: determinant {det:.3e} is negative")]
    InvalidCorrelationMatrix { det: f64 },

    #[error("degenerate bootstrap: statistic undefined on {undefined} of {attempts} resamples")]
    DegenerateBootstrap { undefined: usize, attempts: usize },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("column {column:?} has zero variance within dataset {dataset:?}")]
    DegenerateColumn { dataset: String, column: String },

    #[error("collinear design: column {column:?} is a linear combination of {others:?}")]
    Collinearity { column: String, others: Vec<String> },

    #[error("separation: {0}")]
    Separation(String),

    #[error("unparseable response: no valid option in {0:?}")]
    UnparseableResponse(String),

    #[error("provider error for document {doc_id}: {message}")]
    Provider { doc_id: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
