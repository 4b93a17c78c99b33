//! Distributed multi-sensor multi-target tracking with arithmetic-average
//! fusion of Gaussian-mixture PHDs.

pub mod assignment;
pub mod error;
pub mod filters;
pub mod fusion;
pub mod gaussian;
pub mod metrics;
pub mod mixture;
pub mod network;
pub mod scenario;

pub use error::{Error, Result};
pub use gaussian::{kl_gaussian, moment_match_merge, GaussianComponent};
pub use mixture::{GaussianMixture, ReduceParams};
