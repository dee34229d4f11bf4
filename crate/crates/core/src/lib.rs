//! Solver and simulator for continuous-time jump Markov decision processes in
//! which the controller picks, at every observation epoch, both an action and
//! the time until the next observation.
//!
//! * [`kernels`]: Poisson and birth–death transition rows, discounted moments.
//! * [`engine`]: generic Bellman operator, value iteration, policy extraction.
//! * [`inventory`]: rate-controlled inventory around a target level.
//! * [`gated_queue`]: gated polling queue with controlled server speed.
//! * [`simulator`]: Monte-Carlo rollouts of the underlying jump processes.

pub mod error;
pub mod kernels;

pub use error::{Error, Result};
pub mod engine;
pub mod optimize;
pub mod inventory;
pub mod gated_queue;
pub mod simulator;
