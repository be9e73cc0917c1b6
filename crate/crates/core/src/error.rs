use std_alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid requirements: {0}")]
    InvalidRequirements(String),
    #[error("infeasible profile: {0}")]
    Infeasible(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("matrix shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("time went backwards: {now} < {last}")]
    TimeRegression { now: f64, last: f64 },
    #[error("invalid traffic: {0}")]
    InvalidTraffic(String),
    #[error("unknown setup {0:?}")]
    UnknownSetup(String),
    #[error("simulation aborted at t={time}: {what}")]
    Invariant { time: f64, what: String },
}
