use std::path::PathBuf;

use thiserror::Error;

use crate::rate_model::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("config line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("device {0} is not assigned to any cluster")]
    UnassignedDevice(usize),

    #[error("device {device} has power on subcarrier {subcarrier} which its cluster does not own")]
    InconsistentPower { device: usize, subcarrier: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("capacity exceeded: {0}")]
    CapacityExceeded(String),

    #[error("cluster {0} has a single member and no legal repair exists")]
    SingletonCluster(usize),

    #[error("invalid assignment: {} violation(s), first: {}", .0.len(), .0[0])]
    InvalidAssignment(Vec<Violation>),

    #[error("Z vector is not nonincreasing at index {0}")]
    NonmonotoneInput(usize),

    #[error("power allocation problem is infeasible")]
    Infeasible,

    #[error("solver did not converge after {iterations} iterations (relative gap {gap:e})")]
    NonConvergence {
        iterations: usize,
        gap: f64,
        best: Vec<f64>,
    },

    #[error("instance too large for exhaustive search: {0}")]
    InstanceTooLarge(String),

    #[error("grid search found no feasible point; refine the step")]
    NoFeasibleGridPoint,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("io failure on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
