use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by dataset handling, inference and prediction.
#[derive(Error, Debug)]
pub enum BaldurError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("target value {value} at row {row}, column {col} is not binary")]
    NonBinaryTarget { value: f64, row: usize, col: usize },

    #[error("non-finite value in view '{view}' at row {row}, column {col}")]
    NonFiniteValue { view: String, row: usize, col: usize },

    #[error("relevance-vector count {k} exceeds training rows {n_train}")]
    KTooLarge { k: usize, n_train: usize },

    #[error("class {class} has {count} members, fewer than {n_folds} folds")]
    InsufficientClassMembers {
        class: String,
        count: usize,
        n_folds: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("negative beta in {0} update; upstream second-moment bug")]
    NegativeBeta(String),

    #[error("all latent factors pruned; fit is degenerate (try a larger prune threshold or more data)")]
    AllFactorsPruned,

    #[error("view '{0}' required by the model is missing from the input")]
    ViewMissing(String),

    #[error("view '{view}' has {got} features, model expects {expected}")]
    FeatureCountMismatch {
        view: String,
        got: usize,
        expected: usize,
    },

    #[error("single-class input: {0}")]
    SingleClassInput(String),

    #[error("degenerate labels: class absent in column {col} (seed {seed}); try another seed")]
    DegenerateLabels { col: usize, seed: u64 },

    #[error("model file error: {0}")]
    ModelFile(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<BaldurError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BaldurError {
    /// Process exit code for the CLI contract: 2 = input error, 3 = numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            BaldurError::NumericalBreakdown(_)
            | BaldurError::NegativeBeta(_)
            | BaldurError::AllFactorsPruned => 3,
            BaldurError::Fold { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, BaldurError>;
