use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the toolkit. Variants mirror the failure classes of each
/// pipeline stage and carry enough context to name the offending item.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("empty class: {0}")]
    EmptyClass(String),
    #[error("bad fractions: {0}")]
    BadFractions(String),
    #[error("bad spacing: {0}")]
    BadSpacing(String),
    #[error("bad size: {0}")]
    BadSize(String),
    #[error("reference mean is zero")]
    ZeroReference,
    #[error("constant input")]
    ConstantInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("too few samples: need at least {need}, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("mask source `{source_name}` missing on map `{map_id}`")]
    MissingSource { source_name: String, map_id: String },
    #[error("empty myocardium{}", ctx(.0))]
    EmptyMyocardium(Option<String>),
    #[error("empty input")]
    EmptyInput,
    #[error("subject `{0}` has no usable native T1 or T2 maps")]
    NoUsableMaps(String),
    #[error("only one class present")]
    SingleClass,
    #[error("each class needs at least {need} samples (positives {pos}, negatives {neg})")]
    ClassTooSmall { need: usize, pos: usize, neg: usize },
    #[error("feature `{feature}` missing for subject `{subject_id}`")]
    MissingFeature { feature: String, subject_id: String },
    #[error("training subset is empty")]
    EmptyTrain,
    #[error("training subset contains a single class")]
    SingleClassTrain,
    #[error("subject lists differ: {0}")]
    SubjectMismatch(String),
    #[error("invalid phantom spec: {0}")]
    BadSpec(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cohort has no train/validation/test split")]
    Unsplit,
    #[error("io error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {}: {source}", .path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn ctx(c: &Option<String>) -> String {
    c.as_ref().map(|s| format!(" ({s})")).unwrap_or_default()
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }
}
