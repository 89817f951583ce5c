//! Censored likelihood, priors, and the unnormalized log-posterior on the
//! unconstrained scale.

use serde::Serialize;

use super::data::{CensorStatus, Dataset, Observation};
use super::link::LinkFunction;
use super::params::{random_effects_logdensity, ModelSpec, ParamLayout, Theta};
use crate::dist::ErrorKernel;
use crate::error::{Error, Result};
use crate::stats::normal_logpdf;

/// Log contribution of one observation given its link value `mu`. The kernel's own
/// location is replaced by `mu`.
#[inline]
pub fn obs_loglik(obs: &Observation, mu: f64, kernel: &ErrorKernel) -> f64 {
    if !mu.is_finite() {
        return f64::NEG_INFINITY;
    }
    let k = kernel.with_location(mu);
    match obs.censor {
        CensorStatus::Observed => k.ln_pdf(obs.response),
        CensorStatus::Left(b) => k.ln_cdf(b),
        CensorStatus::Right(b) => k.ln_sf(b),
        CensorStatus::Interval(l, u) => k.ln_interval(l, u),
    }
}

/// Sum of [`obs_loglik`] over one subject's rows for random effects `v`.
#[inline]
pub fn subject_loglik(
    rows: &[Observation],
    link: &LinkFunction,
    beta: &[f64],
    gamma: f64,
    v: &[f64],
    kernel: &ErrorKernel,
) -> f64 {
    let mut total = 0.0;
    for obs in rows {
        let mu = link.evaluate(obs.time, &obs.covariates, beta, gamma, v);
        total += obs_loglik(obs, mu, kernel);
        if total == f64::NEG_INFINITY {
            break;
        }
    }
    total
}

fn check_theta(data: &Dataset, theta: &Theta, spec: &ModelSpec) -> Result<()> {
    let q = spec.link.re_dim();
    if theta.l_v.dim() != q {
        return Err(Error::Dimension {
            expected: q,
            actual: theta.l_v.dim(),
        });
    }
    if theta.v.len() != data.n_subjects() * q {
        return Err(Error::Dimension {
            expected: data.n_subjects() * q,
            actual: theta.v.len(),
        });
    }
    if theta.fixed.beta.len() != spec.link.n_beta() {
        return Err(Error::Dimension {
            expected: spec.link.n_beta(),
            actual: theta.fixed.beta.len(),
        });
    }
    Ok(())
}

/// Conditional log-likelihood given the random effects embedded in `theta`.
pub fn log_likelihood(data: &Dataset, theta: &Theta, spec: &ModelSpec) -> Result<f64> {
    check_theta(data, theta, spec)?;
    let kernel = theta.error_kernel(spec.p0)?;
    let gamma = theta.fixed.gamma.unwrap_or(0.0);
    Ok((0..data.n_subjects())
        .map(|i| {
            subject_loglik(
                data.subject(i),
                &spec.link,
                &theta.fixed.beta,
                gamma,
                theta.v_i(i),
                &kernel,
            )
        })
        .sum())
}

/// Log-prior of all hyperparameters plus the random-effects density of every `v_i`.
pub fn log_prior(theta: &Theta, spec: &ModelSpec) -> f64 {
    let p = &spec.priors;
    let mut lp: f64 = theta
        .fixed
        .beta
        .iter()
        .map(|b| normal_logpdf(*b, 0.0, p.beta_variance))
        .sum();
    if let Some(g) = theta.fixed.gamma {
        lp += normal_logpdf(g, 0.0, p.beta_variance);
    }
    lp += p.scale_prior.ln_pdf(theta.sigma);
    if let Some((k1, k2)) = theta.kappa {
        lp += p.kappa_prior.ln_pdf(k1) + p.kappa_prior.ln_pdf(k2);
    }
    lp += l_v_log_prior(&theta.l_v, spec);
    let q = theta.q();
    for v in theta.v.chunks(q) {
        lp += random_effects_logdensity(v, &theta.l_v);
    }
    lp
}

pub(crate) fn l_v_log_prior(l_v: &super::params::PrecisionCholesky, spec: &ModelSpec) -> f64 {
    let p = &spec.priors;
    let mut lp = 0.0;
    for i in 0..l_v.dim() {
        lp += p.l_diag_prior.ln_pdf(l_v.get(i, i));
        for j in 0..i {
            lp += normal_logpdf(l_v.get(i, j), 0.0, p.offdiag_variance);
        }
    }
    lp
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogPosteriorParts {
    pub log_likelihood: f64,
    pub log_prior: f64,
    pub log_jacobian: f64,
}

impl LogPosteriorParts {
    pub fn total(&self) -> f64 {
        self.log_likelihood + self.log_prior + self.log_jacobian
    }
}

/// The unnormalized posterior of one model on one dataset.
#[derive(Debug, Clone)]
pub struct QmmPosterior<'a> {
    data: &'a Dataset,
    spec: ModelSpec,
    layout: ParamLayout,
}

impl<'a> QmmPosterior<'a> {
    pub fn new(data: &'a Dataset, spec: ModelSpec) -> Result<Self> {
        spec.link.check_covariates(data.n_covariates())?;
        spec.priors.validate()?;
        let layout = spec.layout(data.n_subjects());
        Ok(QmmPosterior { data, spec, layout })
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn parts(&self, unc: &[f64]) -> Result<LogPosteriorParts> {
        let (theta, log_jacobian) = self.layout.constrain(unc)?;
        let log_prior = log_prior(&theta, &self.spec);
        let log_likelihood = if log_prior == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            log_likelihood(self.data, &theta, &self.spec)?
        };
        Ok(LogPosteriorParts {
            log_likelihood,
            log_prior,
            log_jacobian,
        })
    }

    /// `ln p(data | theta) + ln p(theta) + ln |J|`; `-inf` outside the support, an
    /// error if any term is NaN.
    pub fn log_posterior(&self, unc: &[f64]) -> Result<f64> {
        let parts = self.parts(unc)?;
        let total = parts.total();
        if total.is_nan() {
            return Err(Error::Numeric(format!(
                "log-posterior is NaN (parts: {parts:?})"
            )));
        }
        Ok(total)
    }
}

/// Convenience wrapper around [`QmmPosterior::log_posterior`].
pub fn log_posterior_unconstrained(
    theta_unc: &[f64],
    data: &Dataset,
    spec: &ModelSpec,
) -> Result<f64> {
    QmmPosterior::new(data, *spec)?.log_posterior(theta_unc)
}
