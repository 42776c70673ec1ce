use thiserror::Error;

use crate::lora_gd::IterateLog;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("svd did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    Convergence { sweeps: usize, residual: f64 },

    /// Discrete gradient descent produced a non-finite iterate. The log holds
    /// every finite record up to (excluding) the failing step.
    #[error("gradient descent diverged at step {step}")]
    GdDiverged { step: usize, log: Box<IterateLog> },

    #[error("full-rank gradient descent diverged at step {step}")]
    FullRankDiverged { step: usize },

    #[error("flow integration diverged; last finite time {last_finite_time}")]
    FlowDiverged { last_finite_time: f64 },

    #[error("time {t} outside logged horizon [0, {horizon}]")]
    Range { t: f64, horizon: f64 },

    /// Zero trace / zero factor initializations stall the dynamics at a saddle.
    #[error("saddle initialization: {0}")]
    SaddleInit(String),

    #[error("rank assumption violated: numerical rank {rank} must exceed r = {r}")]
    RankAssumption { rank: usize, r: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
