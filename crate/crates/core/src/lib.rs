//! Secure RIS-assisted federated learning: channel and secrecy models, a
//! convergence bound, the latency problem, and DRL and baseline solvers.

pub mod agents;
pub mod channel;
pub mod convergence;
pub mod env;
pub mod error;
pub mod exp;
pub mod nn;
pub mod oracle;
pub mod phy;
pub mod problem;

pub use error::{Error, Result};
