//! Relay placement along a line under Rayleigh fading and log-normal shadowing.
//!
//! Modules:
//! - [`channel`]: units, outage model, shadowing distributions and config
//! - [`asyougo`]: pure as-you-go value iteration, thresholds, average-cost limit
//! - [`explore`]: explore-forward index rule and policy iteration
//! - [`learning`]: stochastic-approximation learners
//! - [`policy`]: uniform decision interface over all policies
//! - [`simulator`]: Monte-Carlo deployments and metrics

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asyougo;
pub mod channel;
pub mod error;
pub mod explore;
pub mod learning;
pub mod policy;
pub mod simulator;

pub use error::{Error, Result};
