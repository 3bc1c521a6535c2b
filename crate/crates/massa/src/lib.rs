//! Multi-agent soft signal-actor (MASSA) training lab.
//!
//! Per-module soft actor-critic agents coordinated by a shared
//! entropy-regularized signal network, a synthetic multi-module
//! recommendation environment, a learned click simulator, offline
//! log-replay evaluation, and ranking metrics.
//!
//! Start with the runnable examples (`cargo run --example ...`) or the
//! `massa` binary for the batch workflow.

pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod embedding;
pub mod env;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod replay;
pub mod signal;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
