//! Outage-aware greedy resource allocation.
//!
//! Channel synthesis, outage labeling, an LSTM outage classifier trained with
//! a differentiable system-outage loss, the greedy allocator, and the exact
//! analytic outage expression used to cross-check Monte Carlo results.

pub mod allocator;
pub mod analysis;
pub mod channel_sim;
pub mod error;
pub mod losses;
pub mod predictor;
pub mod rng;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
