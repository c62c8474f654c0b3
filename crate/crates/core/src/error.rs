//! Crate-wide error type.
//!
//! Variants are grouped into data errors (malformed inputs, schema
//! mismatches) and numerical/degenerate errors (empty sets, zero variance,
//! no events). [`Error::exit_code`] maps the group to the process exit code
//! used by the CLI: 3 for data errors, 4 for numerical ones.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ── data errors ──────────────────────────────────────────────
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing column `{0}` in input")]
    MissingColumn(String),
    #[error("row {row}, column `{col}`: cannot parse `{value}`")]
    UnparsableCell { row: usize, col: String, value: String },
    #[error("row {row}: unknown treatment `{value}` (expected SAVR or TAVR)")]
    UnknownTreatment { row: usize, value: String },
    #[error("duplicate patient id `{0}`")]
    DuplicateId(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("row {row}: feature `{feature}` is missing but required here")]
    MissingFeatureValue { row: usize, feature: String },
    #[error("feature `{0}` not found")]
    MissingFeature(String),
    #[error("inconsistent dimensions: {0}")]
    InconsistentDimensions(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid synthetic-cohort config: {0}")]
    InvalidConfig(String),
    #[error("unsupported format version `{0}`")]
    UnsupportedFormat(String),

    // ── numerical / degenerate errors ────────────────────────────
    #[error("fewer than {needed} complete rows available for imputation (found {found})")]
    InsufficientCompleteRows { needed: usize, found: usize },
    #[error("pooled variance is zero; standardized difference undefined")]
    ZeroPooledVariance,
    #[error("too few observations for the test (need at least 2 per sample)")]
    TooFewObservations,
    #[error("treatment arm `{0}` is empty")]
    EmptyArm(String),
    #[error("too few patients: need at least {needed}, found {found}")]
    TooFewPatients { needed: usize, found: usize },
    #[error("no observed events in the training data")]
    NoEvents,
    #[error("too few rows: need at least {needed}, found {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("no comparable pairs for concordance")]
    NoComparablePairs,
    #[error("patient {0} is in-bag for every tree; refit with another seed or more trees")]
    NeverOutOfBag(usize),
    #[error("no patients with a bad outcome; sensitivity undefined")]
    EmptyBadSet,
    #[error("no patients with a good outcome; specificity undefined")]
    EmptyGoodSet,
    #[error("real-life policy value is zero; relative improvement undefined")]
    ZeroRealValue,
    #[error("observed bad-outcome rate is zero; leaf improvement undefined")]
    ZeroObservedRate,
    #[error("{skipped} of {total} bootstrap resamples were degenerate (limit is 1%)")]
    TooManyDegenerateResamples { skipped: usize, total: usize },
}

impl Error {
    /// Process exit code for the CLI: 3 = data error, 4 = numerical error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_)
            | Error::MissingColumn(_)
            | Error::UnparsableCell { .. }
            | Error::UnknownTreatment { .. }
            | Error::DuplicateId(_)
            | Error::SchemaMismatch(_)
            | Error::MissingFeatureValue { .. }
            | Error::MissingFeature(_)
            | Error::InconsistentDimensions(_)
            | Error::InvalidParameter(_)
            | Error::InvalidConfig(_)
            | Error::UnsupportedFormat(_) => 3,
            _ => 4,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
