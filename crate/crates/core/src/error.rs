use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T> = std::result::Result<T, DisorderError>;

#[derive(Debug, Error)]
pub enum DisorderError {
    #[error("invalid model:\n{0}")]
    InvalidModel(ValidationReport),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state index {index} outside state space of size {len}")]
    StateOutOfRange { index: usize, len: usize },

    #[error("unknown state label {0:?}")]
    UnknownState(String),

    /// The observation has zero predictive density under the model.
    #[error("zero likelihood at step {step}: transition {from} -> {to} is impossible under the model")]
    ZeroLikelihood { step: usize, from: usize, to: usize },

    #[error("posterior {name} = {value} left [0, 1] by more than the clamp tolerance at step {step}")]
    PosteriorOutOfRange {
        name: &'static str,
        value: f64,
        step: usize,
    },

    #[error("value iteration did not converge: {iterations} sweeps, last delta {delta:e} > tol {tol:e}")]
    NonConvergence {
        iterations: usize,
        delta: f64,
        tol: f64,
    },

    #[error("density ratio unbounded at transition {from} -> {to}")]
    DivergentRatio { from: usize, to: usize },

    #[error("no stopping trigger within horizon {horizon}")]
    HorizonExhausted { horizon: usize },

    #[error("prefix of length {len} exceeds the oracle limit {max}")]
    PrefixTooLong { len: usize, max: usize },

    #[error("history tree with {nodes} leaves exceeds the limit {limit}")]
    TreeTooLarge { nodes: f64, limit: f64 },

    #[error("malformed model file: {0}")]
    Parse(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
