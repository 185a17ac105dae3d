//! Streaming spatio-temporal Gaussian process regression.
//!
//! Separable space-time kernels `K_s(x, x') h(t - t')` whose temporal part
//! has a rational spectrum admit an exact finite-dimensional state-space
//! representation over any fixed set of monitored locations. Estimation then
//! runs as a Kalman filter whose per-step cost is independent of the stream
//! length, while reproducing full Gaussian process regression exactly; a
//! representer identity extends the on-grid estimate to arbitrary query
//! points, and an adaptive variant grows and shrinks the location set under
//! a memory budget.
//!
//! Module layout:
//! - [`kernel`]: separable kernel families and their spectra
//! - [`spectral`]: spectral factorization, realizations, rational fits
//! - [`statespace`]: location sets and discretized joint models
//! - [`filter`]: the streaming Kalman recursion and its trajectory runner
//! - [`representer`]: off-grid extension of on-grid estimates
//! - [`adaptive`]: capacity-bounded location management
//! - [`baseline`]: exact batch GP regression, truncated variants, sampling
//! - [`cli`]: configuration and the command implementations

pub mod adaptive;
pub mod audit;
pub mod baseline;
pub mod cli;
pub mod config;
pub mod error;
pub mod filter;
pub mod io;
pub mod kernel;
pub mod representer;
pub mod rng;
pub mod spectral;
pub mod statespace;

pub use error::{Error, Result};
