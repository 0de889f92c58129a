//! Cooperative nonstochastic multi-armed bandits over a delayed communication
//! network.
//!
//! The crate provides:
//!
//! - communication-graph construction and center selection ([`graph`]),
//! - exact FTRL argmin solvers over the probability simplex ([`solvers`]),
//! - the neighborhood-aggregated importance-weighted loss estimator
//!   ([`estimator`]),
//! - the CFTRL / DFTRL policies and the Exp3 baselines ([`policy`]),
//! - a deterministic synchronous round engine with delayed message delivery
//!   ([`sim`]),
//! - independent brute-force and statistical oracles ([`oracle`]), and
//! - an experiment harness with presets and CSV emission ([`harness`]).

#![forbid(unsafe_code)]

pub mod error;
pub mod estimator;
pub mod graph;
pub mod harness;
pub mod oracle;
pub mod policy;
pub mod sim;
pub mod solvers;

pub use error::{Error, Result};
