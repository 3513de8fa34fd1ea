//! Bayesian parameter inference for non-Markovian state-space models,
//! with a genealogy-tree particle filter and particle marginal
//! Metropolis-Hastings, applied to fractional-order battery equivalent
//! circuit models.
//!
//! The crate is organized around the inference pipeline:
//!
//! - [`fom`]: the discrete-time fractional-order model (Grünwald-Letnikov
//!   coefficients, synthetic data simulation, PRBS inputs, impedance).
//! - [`pathtree`]: reference-counted genealogy tree storing all surviving
//!   particle trajectories, with whole-history weighted sums in one
//!   traversal.
//! - [`smc`]: the particle filter (bootstrap and locally optimal
//!   proposals, systematic/multinomial resampling, likelihood estimation).
//! - [`pmmh`]: particle marginal Metropolis-Hastings with two-stage
//!   proposal covariance tuning and conditional-acceptance particle count
//!   selection.
//! - [`analysis`]: posterior summaries, kernel density estimates and
//!   prior-posterior overlap scores.
//! - [`scenario`]: scenario-driven experiment runner backing the CLI.

pub mod analysis;
pub mod error;
pub mod fom;
pub mod pathtree;
pub mod pmmh;
pub mod scenario;
pub mod smc;

pub use error::{Error, Result};
