use thiserror::Error;

pub type Result<T> = std::result::Result<T, GmmError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmmError {
    #[error("covariance of component {component} is not positive definite")]
    SingularCovariance { component: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at parameter {parameter}, sample {sample}")]
    NonFinite { parameter: usize, sample: usize },

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("k-means left cluster {cluster} empty after re-seeding (K = {k})")]
    DegenerateK { k: usize, cluster: usize },

    #[error("pi calibration exhausted after {steps} steps: best outlier count {best} < target {target}")]
    Calibration { steps: usize, best: usize, target: usize },

    #[error("effective count {count} too small for dimension {dim}")]
    InsufficientCount { count: f64, dim: usize },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },

    #[error("unsupported model file version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("unknown {kind} '{name}' (known: {known})")]
    UnknownStrategy { kind: &'static str, name: String, known: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

/// Broad failure class, used for CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Numerical,
    Config,
}

impl GmmError {
    pub fn class(&self) -> ErrorClass {
        match self {
            GmmError::SingularCovariance { .. }
            | GmmError::DegenerateK { .. }
            | GmmError::Calibration { .. }
            | GmmError::InsufficientCount { .. }
            | GmmError::InvalidModel(_) => ErrorClass::Numerical,
            GmmError::UnknownStrategy { .. } | GmmError::Config(_) | GmmError::UnsupportedVersion { .. } => {
                ErrorClass::Config
            }
            GmmError::Shape(_)
            | GmmError::NonFinite { .. }
            | GmmError::InsufficientData { .. }
            | GmmError::Parse { .. }
            | GmmError::Io(_) => ErrorClass::Data,
        }
    }

    /// Stable machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            GmmError::SingularCovariance { .. } => "singular_covariance",
            GmmError::InvalidModel(_) => "invalid_model",
            GmmError::Shape(_) => "shape",
            GmmError::NonFinite { .. } => "non_finite",
            GmmError::InsufficientData { .. } => "insufficient_data",
            GmmError::DegenerateK { .. } => "degenerate_k",
            GmmError::Calibration { .. } => "calibration",
            GmmError::InsufficientCount { .. } => "insufficient_count",
            GmmError::Parse { .. } => "parse",
            GmmError::UnsupportedVersion { .. } => "unsupported_version",
            GmmError::UnknownStrategy { .. } => "unknown_strategy",
            GmmError::Config(_) => "config",
            GmmError::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for GmmError {
    fn from(e: std::io::Error) -> Self {
        GmmError::Io(e.to_string())
    }
}
