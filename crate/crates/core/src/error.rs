use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped by who is at fault: malformed input (schema, data,
/// validation, configuration, policy syntax, I/O) or a failure during
/// estimation and numerics. [`Error::exit_code`] maps the two groups onto the
/// CLI's exit codes 2 and 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error at row {row}, column {column}: {message}")]
    Data {
        row: usize,
        column: String,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("policy error: {0}")]
    Policy(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("estimation error at {location}: {message}")]
    Estimation { location: String, message: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("degenerate contrast: row {row} has zero estimated variance")]
    DegenerateContrast { row: usize },

    #[error("singular correlation matrix: {0}")]
    Singular(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn estimation(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Estimation {
            location: location.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag used in error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Data { .. } => "data",
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::Policy(_) => "policy",
            Error::Domain(_) => "domain",
            Error::Estimation { .. } => "estimation",
            Error::Numerical(_) => "numerical",
            Error::DegenerateContrast { .. } => "degenerate_contrast",
            Error::Singular(_) => "singular",
            Error::Calibration(_) => "calibration",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// 2 for bad input, 1 for estimation and numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema(_)
            | Error::Data { .. }
            | Error::Validation(_)
            | Error::Config(_)
            | Error::Policy(_)
            | Error::Domain(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::Estimation { .. }
            | Error::Numerical(_)
            | Error::DegenerateContrast { .. }
            | Error::Singular(_)
            | Error::Calibration(_) => 1,
        }
    }
}
