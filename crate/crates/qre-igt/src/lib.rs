//! Forward solving of entropy-regularized zero-sum games to their quantal
//! response equilibrium, and joint statistical recovery of payoff parameters
//! and the unknown rationality temperature from sampled play.
//!
//! The pipeline, end to end:
//!
//! 1. [`game`]: game instances with linear feature payoffs, and seeded
//!    generators for random matrix and Markov games;
//! 2. [`solver`]: the logit fixed-point solver producing equilibrium
//!    policies (with a value-iteration outer loop for Markov games);
//! 3. [`sampling`]: observational data drawn from equilibrium play and the
//!    frequency/transition estimators;
//! 4. [`system`]: the linearized constraint system `X theta = tau y` built
//!    from policies and features, with identifiability diagnostics;
//! 5. [`estimator`]: normalized least squares splitting `theta` from `tau`
//!    via the known norm, the fixed-temperature baseline, Markov reward
//!    recovery, and confidence-set partial identification;
//! 6. [`experiments`]: seeded experiment harness emitting per-trial records,
//!    aggregate summaries, and log-log convergence slopes.
//!
//! Everything is deterministic given a master seed; see [`rng`] for the
//! stream-derivation discipline.

pub mod cli;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod files;
pub mod game;
pub mod rng;
pub mod sampling;
pub mod solver;
pub mod system;
pub mod verify;

pub use error::{Error, Result};
