//! Bayesian detection of two successive disorders in a Markov chain whose
//! transition kernel switches twice at random times.

pub mod detect;
pub mod double;
pub mod envelope;
pub mod error;
pub mod eval;
pub mod filter;
pub mod fixtures;
pub mod model;
pub mod oracle;
pub mod segment;
pub mod simulate;
pub mod verdict;

pub use error::{DisorderError, Result};
pub use model::{Kernel, ModelSpec, PriorParams, Regime, StateSpace};
