//! Optimization and simulation of mean-field Markov decision processes.
//!
//! A system of `N` exchangeable particles moves through `S` states under a
//! kernel `K(a, C)` chosen by a central controller, while a shared context
//! `C` evolves with the population. As `N` grows the population measure and
//! context follow a deterministic recursion, and optimal policies of that
//! limit are asymptotically optimal for the random system.
//!
//! * [`model`] – model definition, the limit step and assumption probes.
//! * [`sim`] – exact `N`-particle simulation and Monte Carlo estimates.
//! * [`meanfield`] – limit trajectories, optimal open-loop actions,
//!   backward induction and discounted value iteration on a grid.
//! * [`clt`] – covariance recursion of the `sqrt(N)` fluctuations.
//! * [`oracle`] – brute-force exact solution for tiny systems.
//! * [`broker`] – grid brokering: queues, greedy allocation, baselines.

pub mod broker;
pub mod catalog;
pub mod clt;
pub mod error;
pub mod grid;
pub mod meanfield;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use model::{
    mean_field_step, validate_model, Action, ActionSet, Context, InitialState, Kernel, ModelSpec,
    PopulationMeasure, Resolution, Sense, StateSpace,
};
