use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: `{field}` {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("failed to parse scenario file {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("unsupported AP layout: {0} APs do not form a square grid")]
    UnsupportedLayout(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("per-AP power budget exceeded at AP {ap}: sum of normalized coefficients is {total}")]
    PowerBudget { ap: usize, total: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("uplink matrix is singular or ill-conditioned (reciprocal condition {rcond:e})")]
    DegenerateSystem { rcond: f64 },

    #[error("target SINR infeasible for sensors {offenders:?}{}", fmt_ceiling(*max_uniform_target))]
    InfeasibleTarget {
        offenders: Vec<usize>,
        max_uniform_target: Option<f64>,
    },

    #[error("sensor {0} has zero estimate variance at every AP and cannot be powered")]
    UnservableSensor(usize),

    #[error("Monte-Carlo consistency check failed: {0}")]
    Consistency(String),

    #[error("empty sample set")]
    EmptySamples,

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn fmt_ceiling(ceiling: Option<f64>) -> String {
    match ceiling {
        Some(v) => format!(" (largest uniform target reachable: {v:.4})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }
}
