//! Tabular offline reinforcement-learning laboratory.
//!
//! Everything is built around episodic tabular MDPs with an absorbing final
//! state `s∘` that every non-absorbing state reaches with probability
//! `1 - gamma` per step, which encodes the discount factor as termination.
//!
//! The crate is organized as:
//! - [`mdp`] — exact MDP representation, path sampling, and linear-algebra
//!   solvers for values, occupancy measures, first-visit and return
//!   probabilities.
//! - [`estimation`] — transition counting from logged paths, model
//!   construction, and categorical estimators (sample-mean and
//!   deterministic-favored).
//! - [`ope`] — model-based and importance-sampling off-policy evaluation,
//!   off-policy optimization, and robust (delta-state / L1-rectangular)
//!   value intervals and occupancy bounds.
//! - [`bounds`] — closed-form sample-complexity formulas and the data-driven
//!   accuracy certificate.
//! - [`harness`] — seeded, config-driven Monte Carlo experiments with
//!   CSV/JSON output.

pub mod bounds;
pub mod cli;
pub mod estimation;
pub mod harness;
pub mod linalg;
pub mod mdp;
pub mod ope;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("model validation failed: {0:?}")]
    InvalidModel(Vec<String>),

    #[error("linear solve residual {residual:e} exceeds tolerance {tolerance:e}")]
    SolveTolerance { residual: f64, tolerance: f64 },

    #[error("linear system is numerically singular")]
    SingularSystem,

    #[error(
        "undefined importance weight: behavior policy has zero probability \
         for action {action} at state {state} but target probability is {target_prob}"
    )]
    UndefinedWeight {
        state: usize,
        action: usize,
        target_prob: f64,
    },

    #[error("value iteration did not converge within {0} iterations")]
    NoConvergence(usize),

    #[error("config hash mismatch at {path}: existing {existing}, new {new} (use force to overwrite)")]
    ConfigHashMismatch {
        path: String,
        existing: String,
        new: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
