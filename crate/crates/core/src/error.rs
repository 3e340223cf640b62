use thiserror::Error;

/// Errors raised while ingesting data or fitting models.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema: {0}")]
    Schema(String),

    #[error("missing value at row {row}, column '{column}'")]
    MissingValue { row: usize, column: String },

    #[error("non-numeric value '{value}' at row {row}, column '{column}'")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("unknown level '{value}' at row {row}, column '{column}'")]
    UnknownLevel {
        row: usize,
        column: String,
        value: String,
    },

    #[error("empty level '{level}' in column '{column}'")]
    EmptyLevel { column: String, level: String },

    #[error("unknown variable '{0}'")]
    UnknownVariable(String),

    #[error("singular design: collinear columns [{}]", .columns.join(", "))]
    SingularDesign { columns: Vec<String> },

    #[error("models are not nested: reduced deviance {reduced} below full deviance {full}")]
    NonNested { reduced: f64, full: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("duplicate split {variable} > {threshold}")]
    DuplicateSplit { variable: String, threshold: f64 },

    #[error("too few distinct values for '{variable}': need {needed}, found {found}")]
    TooFewDistinct {
        variable: String,
        needed: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Short machine-readable category used by the command-line error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Schema(_) => "schema",
            Error::MissingValue { .. } => "missing_value",
            Error::NonNumeric { .. } => "non_numeric",
            Error::UnknownLevel { .. } => "unknown_level",
            Error::EmptyLevel { .. } => "empty_level",
            Error::UnknownVariable(_) => "unknown_variable",
            Error::SingularDesign { .. } => "singular_design",
            Error::NonNested { .. } => "non_nested",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::DuplicateSplit { .. } => "duplicate_split",
            Error::TooFewDistinct { .. } => "too_few_distinct",
            Error::InvalidArgument(_) => "invalid_argument",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
