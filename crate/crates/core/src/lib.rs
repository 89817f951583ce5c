//! Bayesian quantile mixed-effects models for censored longitudinal outcomes with
//! skew Laplace and skew exponential power error kernels.

pub mod bridge;
pub mod dist;
pub mod error;
pub mod model;
pub mod parallel;
pub mod residuals;
pub mod sampler;
pub mod simstudy;
pub mod special;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
