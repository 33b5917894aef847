//! Distributed identification of coupled nonlinear agents: particle
//! smoothing, push-sum gossip and a contraction-constrained EM loop.

pub mod coupling;
pub mod em;
pub mod error;
pub mod experiment;
pub mod gossip;
pub mod model;
pub mod parallel;
pub mod rng;
pub mod sim;
pub mod smoother;
pub mod stability;
pub mod topology;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
