use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Invalid arguments or configuration.
    Usage,
    /// Malformed or inconsistent input data.
    Data,
    /// A numerical procedure could not produce a valid result.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("singular covariance{}: {reason} (condition number {condition:.3e})", cluster_label(*.cluster))]
    SingularCovariance {
        cluster: Option<usize>,
        condition: f64,
        reason: String,
    },

    #[error("collinear regressors: design matrix is rank deficient")]
    Collinear,

    #[error("insufficient data: clusters {clusters:?} have too few observations (need more than {required})")]
    InsufficientData { clusters: Vec<usize>, required: usize },

    #[error("degrees of freedom: {0}")]
    DegreesOfFreedom(String),

    #[error("threshold order: theta1 ({theta1}) must exceed theta0 ({theta0}) and theta0 must be positive")]
    ThresholdOrder { theta1: f64, theta0: f64 },

    #[error("series too short: length {len}, need at least {required}")]
    SeriesTooShort { len: usize, required: usize },

    #[error("unknown sensor '{0}'")]
    UnknownSensor(String),

    #[error("cluster {0} has no trained model")]
    UnusableCluster(usize),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("unresolvable location '{0}'")]
    UnresolvableLocation(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Gap { path: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

fn cluster_label(cluster: Option<usize>) -> String {
    match cluster {
        Some(k) => format!(" in cluster {k}"),
        None => String::new(),
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Usage,
            Error::SingularCovariance { .. } | Error::Collinear | Error::ThresholdOrder { .. } => {
                ErrorClass::Numerical
            }
            Error::Domain(_) | Error::DegreesOfFreedom(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn schema(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
