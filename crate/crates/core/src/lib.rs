//! State-augmented primal-dual power control for wireless interference
//! networks.
//!
//! A message-passing policy takes the channel gains and the current dual
//! variables of per-user minimum-rate constraints and emits transmit
//! powers. Training maximizes the Lagrangian averaged over sampled duals;
//! execution runs projected dual descent alongside the policy.

pub mod baselines;
pub mod channel;
pub mod cli;
pub mod config;
pub mod error;
pub mod executor;
pub mod gnn;
pub mod io;
pub mod lagrangian;
pub mod metrics;
pub mod optim;
pub mod rate;
pub mod rng;
pub mod trainer;

pub use error::{Result, RrmError};
