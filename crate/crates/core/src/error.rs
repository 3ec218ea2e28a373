use std::fmt;

use crate::model::Action;

/// Where a structural check failed while probing a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub time: usize,
    pub action: Vec<f64>,
    pub context: Vec<f64>,
}

impl fmt::Display for Probe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={} action={:?} context={:?}",
            self.time, self.action, self.context
        )
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("kernel row {row} is not a probability vector ({detail}) at probe {probe}")]
    Structural {
        row: usize,
        probe: Probe,
        detail: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("search budget of {budget} sequences exhausted; best reward so far {best_reward}")]
    Budget {
        budget: u64,
        best_reward: f64,
        best_actions: Vec<Action>,
    },

    #[error("state space too large: {count} states exceed the cap of {cap}")]
    Size { count: u128, cap: u128 },

    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;
