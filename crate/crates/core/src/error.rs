use thiserror::Error;

use crate::instances::JobId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid job {job}: {reason}")]
    InvalidJob { job: JobId, reason: String },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("parameter out of range: {0}")]
    Param(String),

    #[error("unsupported family `{family}` for {operation}")]
    UnsupportedFamily { family: String, operation: String },

    #[error("job {0} cannot be processed (all-zero column)")]
    Unprocessable(JobId),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("solver did not converge after {iterations} iterations (stationarity {stationarity:.3e}, dual-sum gap {dual_gap:.3e})")]
    NonConvergence {
        iterations: usize,
        stationarity: f64,
        dual_gap: f64,
        best: Box<crate::eg::Allocation>,
    },

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error("infeasible decision at t={time}: violation {violation:.3e}")]
    InfeasibleDecision { time: f64, violation: f64 },

    #[error("no progress at t={0}: every alive job has zero rate")]
    Livelock(f64),

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("certificate error: {0}")]
    Certificate(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
