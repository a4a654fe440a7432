use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::energy::PhasePair;
use crate::scheme::RunOutput;
use crate::solver::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which side of the Gibbs triangle a cell violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GibbsConstraint {
    Phi1Positive,
    Phi2Positive,
    SumBelowOne,
}

impl fmt::Display for GibbsConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GibbsConstraint::Phi1Positive => f.write_str("phi1 > 0"),
            GibbsConstraint::Phi2Positive => f.write_str("phi2 > 0"),
            GibbsConstraint::SumBelowOne => f.write_str("phi1 + phi2 < 1"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: n={}, L={} vs n={}, L={}", left.0, left.1, right.0, right.1)]
    GridMismatch { left: (usize, f64), right: (usize, f64) },

    #[error("non-finite value at cell ({i}, {j})")]
    NonFinite { i: usize, j: usize },

    #[error("non-positive coefficient on {axis}-face ({i}, {j})")]
    NonPositiveCoefficient { axis: char, i: usize, j: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("state leaves the Gibbs triangle at cell ({i}, {j}): {constraint} fails (value {value:e})")]
    OutsideGibbs { i: usize, j: usize, constraint: GibbsConstraint, value: f64 },

    #[error("mass constraint violated for phase {phase}: mean {mean} vs target {target}")]
    MassConstraint { phase: usize, mean: f64, target: f64 },

    #[error("final time {t_final} is not an integer multiple of dt = {dt}")]
    TimeGrid { t_final: f64, dt: f64 },

    #[error("time mismatch: {0} vs {1}")]
    TimeMismatch(f64, f64),

    #[error("solver failed: {reason}")]
    SolverFailure { reason: String, report: SolveReport, best: Box<PhasePair> },

    #[error("run stopped at step {step}: {source}")]
    RunAborted {
        step: usize,
        partial: Box<RunOutput>,
        #[source]
        source: Box<Error>,
    },

    #[error("config error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, msg: String },

    #[error("snapshot {path}: {msg}")]
    Snapshot { path: PathBuf, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
