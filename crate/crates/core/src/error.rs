use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown node {0}")]
    UnknownNode(String),

    #[error("power flow did not converge after {iterations} iterations (worst node {worst_node}, mismatch {mismatch:.3e} pu)")]
    NonConvergence {
        iterations: usize,
        worst_node: String,
        mismatch: f64,
    },

    #[error("invalid injection state: {0}")]
    InvalidState(String),

    #[error("degenerate scenario: {0}")]
    DegenerateScenario(String),

    #[error("rank-deficient design matrix; collinear measurement columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("outside curve domain: {0}")]
    Domain(String),

    #[error("missing measurement channel: {0}")]
    MissingMeasurement(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("tap enumeration would visit {0} combinations (limit 100000)")]
    TooManyCombinations(u64),

    #[error("training solve failed for scenario {scenario}, plant {plant}, Q = {q_kvar} kvar: {source}")]
    Training {
        scenario: usize,
        plant: String,
        q_kvar: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
