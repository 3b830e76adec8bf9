use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fock cutoff {cutoff} too small for nbar {nbar}: P(n > cutoff) = {tail:.3e}")]
    CutoffTooSmall { cutoff: usize, nbar: f64, tail: f64 },

    #[error("time {t:.6e} s outside interaction window [0, {tau:.6e}] s")]
    OutOfRange { t: f64, tau: f64 },

    #[error("integration failure at t = {t:.6e} s (step {step:.3e} s): {reason}")]
    IntegrationFailure { t: f64, step: f64, reason: String },

    #[error("{} of the shots failed; first at shot {}: {}", failures.len(), failures[0].0, failures[0].1)]
    ShotsFailed { failures: Vec<(usize, String)> },

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("infeasible keyframe at x = {x_um:.3} um: {reason}")]
    InfeasibleKeyframe { x_um: f64, reason: String },

    #[error("voltage clamp violated: {volts:.4} V on electrode {electrode} (limit {limit} V)")]
    VoltageClamp { electrode: usize, volts: f64, limit: f64 },

    #[error("trajectory failure at frame {frame}: {reason}")]
    TrajectoryFailure { frame: usize, reason: String },

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("multimodal spectrum: {0}")]
    Multimodal(String),

    #[error("calibration failure: {0}")]
    CalibrationFailure(String),

    #[error("rescan required: {0}")]
    RescanRequired(String),

    #[error("infeasible compensation: {0}")]
    InfeasibleCompensation(String),

    #[error("estimation failure: {0}")]
    EstimationFailure(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
