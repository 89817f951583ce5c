//! Quantile link functions `mu_ij = g(x_ij, v_i, beta)`.

use std::f64::consts::LN_10;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::log_add_exp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffects {
    pub beta: Vec<f64>,
    /// CD4 coefficient; only present for the biexponential link.
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkFunction {
    /// `beta1 + v1 + (beta2 + v2) t`
    LinearRandomInterceptSlope,
    /// Two-phase decay on the log10 scale with the slow rate shifted by CD4.
    BiexponentialCd4 { cd4_column: usize },
}

impl LinkFunction {
    /// Random-effect dimension `q`.
    pub fn re_dim(&self) -> usize {
        match self {
            LinkFunction::LinearRandomInterceptSlope => 2,
            LinkFunction::BiexponentialCd4 { .. } => 4,
        }
    }

    pub fn n_beta(&self) -> usize {
        self.re_dim()
    }

    pub fn has_gamma(&self) -> bool {
        matches!(self, LinkFunction::BiexponentialCd4 { .. })
    }

    pub fn required_covariates(&self) -> usize {
        match self {
            LinkFunction::LinearRandomInterceptSlope => 0,
            LinkFunction::BiexponentialCd4 { cd4_column } => cd4_column + 1,
        }
    }

    pub fn check_covariates(&self, n_covariates: usize) -> Result<()> {
        if n_covariates < self.required_covariates() {
            return Err(Error::config(format!(
                "link needs at least {} covariate column(s), dataset has {n_covariates}",
                self.required_covariates()
            )));
        }
        Ok(())
    }

    /// Evaluates the link. `gamma` is ignored by the linear link.
    #[inline]
    pub fn evaluate(
        &self,
        time: f64,
        covariates: &[f64],
        beta: &[f64],
        gamma: f64,
        v: &[f64],
    ) -> f64 {
        match *self {
            LinkFunction::LinearRandomInterceptSlope => linear(time, beta, v),
            LinkFunction::BiexponentialCd4 { cd4_column } => {
                biexponential(time, covariates[cd4_column], beta, gamma, v)
            }
        }
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.n_beta()).map(|k| format!("beta[{k}]")).collect();
        if self.has_gamma() {
            names.push("gamma".into());
        }
        names
    }
}

#[inline]
fn linear(t: f64, beta: &[f64], v: &[f64]) -> f64 {
    beta[0] + v[0] + (beta[1] + v[1]) * t
}

// log10(P1 exp(-l1 t) + P2 exp(-l2 t)) evaluated as a log-sum-exp of the two phases.
#[inline]
fn biexponential(t: f64, cd4: f64, beta: &[f64], gamma: f64, v: &[f64]) -> f64 {
    let lambda1 = beta[1] + v[1];
    let lambda2 = beta[3] + v[3] + gamma * cd4;
    let fast = beta[0] + v[0] - lambda1 * t;
    let slow = beta[2] + v[2] - lambda2 * t;
    log_add_exp(fast, slow) / LN_10
}

pub fn link_linear(t: f64, fx: &FixedEffects, v: &[f64; 2]) -> f64 {
    linear(t, &fx.beta, v)
}

/// Returns `-inf` when both phases underflow to zero.
pub fn link_biexponential(t: f64, cd4: f64, fx: &FixedEffects, v: &[f64; 4]) -> f64 {
    biexponential(t, cd4, &fx.beta, fx.gamma.unwrap_or(0.0), v)
}
