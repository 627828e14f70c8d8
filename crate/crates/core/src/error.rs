use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid target: {0}")]
    InvalidTarget(String),

    #[error("missing capability: {0}")]
    Capability(String),

    #[error("non-finite field value during integration at t = {t}")]
    Integration { t: f64 },

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("assignment problem of size {m} exceeds cap {cap}; use the sliced estimator instead")]
    OverCap { m: usize, cap: usize },

    #[error("training diverged at step {step} (loss = {loss})")]
    Divergence {
        step: usize,
        loss: f64,
        trace: Vec<f64>,
    },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("{0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn check_unit_interval(t: f64) -> Result<()> {
    if t.is_finite() && (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(domain(format!("t = {t} is outside [0, 1]")))
    }
}

pub(crate) fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(domain("non-finite input vector"))
    }
}
