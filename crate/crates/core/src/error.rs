use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("censoring indicator at row {index} is {value}, expected 0 or 1")]
    InvalidIndicator { index: usize, value: String },

    #[error("precision parameter for subgroup {k} is {value}, must be positive")]
    NonPositivePrecision { k: usize, value: f64 },

    #[error("matrix for subgroup {k} is not symmetric positive definite")]
    NotPositiveDefinite { k: usize },

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("subgroup {k} has effective size {count:.3}, below the floor {floor:.3}")]
    DegenerateCount { k: usize, count: f64, floor: f64 },

    #[error("regression moments are corrupt: weighted second moment {0} is not positive")]
    NonPositiveSecondMoment(f64),

    #[error("every one of the {starts} starts collapsed a subgroup")]
    AllStartsDegenerate { starts: usize },

    #[error("every grid fit failed")]
    AllFitsFailed { table: Vec<crate::selection::SelectionRow> },

    #[error("invalid simulation design: {0}")]
    InvalidDesign(String),

    #[error("censoring calibration failed: {0}")]
    CalibrationFailure(String),

    #[error("{0} distinct labels exceed the exhaustive permutation limit of 8")]
    TooManyLabels(usize),

    #[error("no true edges: true positive rate undefined")]
    EmptyTruth,

    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: u64, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}
