//! Simulation and numerical-analysis laboratory for subcritical branching
//! Lévy processes killed at the origin.
//!
//! A particle starts at x > 0, moves as a Lévy process (drift + Brownian part
//! + finite-activity jumps), branches at exponential rate into i.i.d. copies,
//! and is removed the instant it enters the negative half-line. The library
//! computes the branching functionals and survival decay of the underlying
//! Galton-Watson structure ([`branching_law`]), the Laplace exponent,
//! exponential tilting and sampling of the spatial motion ([`levy_models`]),
//! scale functions, first-passage and renewal-function Monte Carlo
//! ([`fluctuation`]), full tree simulation with killing ([`particle_sim`]),
//! the limiting constants and scalings of the survival probability, maximum
//! displacement and Yaglom laws ([`asymptotics`]), and a deterministic
//! parallel experiment harness with a CLI ([`harness`]).

pub mod asymptotics;
pub mod branching_law;
pub mod error;
pub mod fluctuation;
pub mod harness;
pub mod levy_models;
pub mod particle_sim;

pub use error::{BklError, Result};
