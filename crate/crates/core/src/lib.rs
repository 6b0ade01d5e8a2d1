//! Deterministic simulation and matrix-level verification of consensus-based
//! non-Bayesian hypothesis testing with crash faults and unbounded (finite)
//! message delays.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: topology, reduced graphs, source components and the two
//!   equivalent detectability conditions.
//! - [`observation`]: likelihood tables, KL divergences, identifiability and
//!   the constants `C0`, `C1`.
//! - [`protocol`]: the event-driven asynchronous protocol and its traces.
//! - [`analysis`]: update matrices, backward products, ergodic coefficients
//!   and the numerical checks built on them.
//! - [`harness`]: batch runs, trace replay and metric files behind the CLI.

pub mod analysis;
pub mod error;
pub mod graph;
pub mod harness;
pub mod observation;
pub mod protocol;
pub mod rng;

pub use error::{Error, Result};
