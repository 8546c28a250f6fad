//! Variational feedback Nash equilibrium seeking for linear stochastic games
//! with chance constraints, over finite-impulse-response system-level
//! parametrizations.

#![allow(clippy::needless_range_loop)]

pub mod feasible_set;
pub mod game_model;
pub mod linalg;
pub mod oracle;
pub mod rng;
pub mod seeker;
pub mod simulator;
pub mod sls_core;

#[cfg(test)]
pub(crate) mod test_support;
