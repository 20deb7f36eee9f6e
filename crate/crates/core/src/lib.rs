//! Simulation and transient analysis of multi-agent adaptive networks.
//!
//! Agents run constant step-size stochastic-gradient updates and combine
//! their iterates with neighbors through three left-stochastic matrices
//! `(A1, A0, A2)`. Consensus, combine-then-adapt (CTA) and adapt-then-combine
//! (ATC) diffusion are special cases. Besides running the recursions, the crate
//! evaluates the limit point `w°`, the centralized reference recursion, the
//! energy-operator bounds on the learning-curve components, and the step-size
//! stability bound, and checks Monte Carlo curves against them.
//!
//! Module map:
//! - [`network`]: topologies, combination policies, spectral split of `A`.
//! - [`models`]: agent update maps and their regularity constants.
//! - [`strategies`]: the distributed recursions and the reference recursion.
//! - [`analysis`]: network transform, energy operators, theoretical bounds.
//! - [`experiments`]: Monte Carlo harness, phase detection, verdicts.

// NaN-rejecting guards are written as `!(x > 0.0)`, and block loops index
// several parallel buffers at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod linalg;
pub mod models;
pub mod network;
mod serde_util;
pub mod strategies;

pub use error::{Error, Result};
pub use exec::Execution;
pub use nalgebra;
