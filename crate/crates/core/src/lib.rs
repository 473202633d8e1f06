//! Joint channel and power allocation for interference-limited multi-channel
//! networks with per-user minimum-rate constraints.

pub mod autodiff;
pub mod baselines;
pub mod channel;
pub mod error;
pub mod ewmmse;
pub mod gnn;
pub mod harness;
pub mod model;

pub use error::{Error, Result};
