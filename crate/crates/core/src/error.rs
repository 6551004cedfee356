use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("band limit {requested} exceeds configured maximum {max}")]
    Resource { requested: usize, max: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid frame index {0} (expected 1, 2 or 3)")]
    FrameIndex(usize),
    #[error("newton iteration did not converge after {iters} iterations (C0 = {c0:e}, C1 = {c1:e})")]
    NewtonFailure { iters: usize, c0: f64, c1: f64 },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("left the physical regime at t = {t}: {what}")]
    RegimeExit { t: f64, what: String },
    #[error("frame degenerate at t = {t}")]
    DegenerateFrame { t: f64 },
    #[error("stability monitor tripped at t = {t}: norm grew by {factor:e}")]
    Unstable { t: f64, factor: f64 },
    #[error("root bracket failure: {0}")]
    Bracket(String),
    #[error("rate fit: {0}")]
    Fit(String),
    #[error("limit extraction did not converge: drift {drift:e} per e-fold")]
    NoConvergence { drift: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
