//! Private, truthful spectrum sharing modeled as a γ-aggregative game.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] — rates, contention contributions, aggregators and utilities.
//! * [`dp`] — Laplace noise, sparse-vector cost search, exponential selection,
//!   composition and accuracy bounds.
//! * [`equilibrium`] — aggregator grid, target selection, best-response sets,
//!   the η approximation budget and brute-force regret oracles.
//! * [`learning`] — the multiplicative-weights learner with per-period
//!   exponential aggregator selection and KL projection.
//! * [`mediator`] — report collection, one mediator epoch, suggestions and
//!   the opt-in/opt-out truthfulness experiment.
//! * [`sim`] — scenario generation, experiment sweeps, user dynamics,
//!   record persistence and SVG charts.

pub mod dp;
pub mod equilibrium;
pub mod error;
pub mod learning;
pub mod mediator;
pub mod model;
pub mod sim;

pub use error::{Error, Result};
