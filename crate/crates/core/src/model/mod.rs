//! Hierarchical quantile mixed-effects model: data, links, priors, parameters and
//! the censored log-posterior.

pub mod data;
pub mod link;
pub mod params;
pub mod posterior;
pub mod prior;

pub use data::{CensorStatus, Dataset, Observation};
pub use link::{link_biexponential, link_linear, FixedEffects, LinkFunction};
pub use params::{
    random_effects_logdensity, KappaTransform, KernelKind, ModelSpec, ParamLayout,
    PrecisionCholesky, Theta,
};
pub use posterior::{
    log_likelihood, log_posterior_unconstrained, log_prior, obs_loglik, subject_loglik,
    LogPosteriorParts, QmmPosterior,
};
pub use prior::{HalfT, KappaPrior, PriorSpec};
