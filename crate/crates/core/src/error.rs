use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Matrix or vector sizes do not agree. `stage` is `None` for problem-level data.
    #[error("dimension mismatch at {}: {what}", fmt_stage(*.stage))]
    DimensionMismatch { stage: Option<usize>, what: String },

    /// The factorization of `G_{t+1}` failed at stage `t`.
    #[error("G_{{t+1}} is not positive definite at stage {0}")]
    NotPositiveDefinite(usize),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("missing field `{0}`")]
    Schema(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("KKT matrix is singular")]
    SingularKkt,

    #[error("batch boundary {boundary} disagrees between levels (relative gap {gap:.3e})")]
    Stitch { boundary: usize, gap: f64 },

    #[error("active-set loop did not converge within {0} iterations")]
    MaxIterExceeded(usize),

    #[error("no timing levels recorded")]
    EmptyTimings,
}

fn fmt_stage(stage: Option<usize>) -> String {
    match stage {
        Some(t) => format!("stage {t}"),
        None => "problem".to_string(),
    }
}

impl Error {
    pub(crate) fn dims(stage: impl Into<Option<usize>>, what: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            stage: stage.into(),
            what: what.into(),
        }
    }
}
