use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::half_t_logpdf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfT {
    pub nu: f64,
    pub scale: f64,
}

impl HalfT {
    pub fn new(nu: f64, scale: f64) -> Result<Self> {
        if nu > 0.0 && scale > 0.0 && nu.is_finite() && scale.is_finite() {
            Ok(HalfT { nu, scale })
        } else {
            Err(Error::config(format!(
                "half-t needs positive nu and scale, got ({nu}, {scale})"
            )))
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        half_t_logpdf(x, self.nu, self.scale)
    }
}

impl Default for HalfT {
    /// `t3+(0, sqrt 2)`
    fn default() -> Self {
        HalfT {
            nu: 3.0,
            scale: std::f64::consts::SQRT_2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KappaPrior {
    HalfT(HalfT),
    Uniform { lower: f64, upper: f64 },
}

impl KappaPrior {
    pub fn uniform(lower: f64, upper: f64) -> Result<Self> {
        if lower >= 0.0 && lower < upper && upper.is_finite() {
            Ok(KappaPrior::Uniform { lower, upper })
        } else {
            Err(Error::config(format!(
                "uniform kappa prior needs 0 <= lower < upper, got ({lower}, {upper})"
            )))
        }
    }

    pub fn ln_pdf(&self, kappa: f64) -> f64 {
        match *self {
            KappaPrior::HalfT(h) => h.ln_pdf(kappa),
            KappaPrior::Uniform { lower, upper } => {
                if kappa > lower && kappa < upper {
                    -(upper - lower).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }
}

impl Default for KappaPrior {
    fn default() -> Self {
        KappaPrior::HalfT(HalfT::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Variance of the independent normal priors on beta and gamma.
    pub beta_variance: f64,
    pub scale_prior: HalfT,
    pub kappa_prior: KappaPrior,
    /// Prior on the diagonal of the precision Cholesky factor.
    pub l_diag_prior: HalfT,
    pub offdiag_variance: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            beta_variance: 1000.0,
            scale_prior: HalfT::default(),
            kappa_prior: KappaPrior::default(),
            l_diag_prior: HalfT::default(),
            offdiag_variance: 1000.0,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_variance > 0.0 && self.offdiag_variance > 0.0) {
            return Err(Error::config("prior variances must be positive"));
        }
        HalfT::new(self.scale_prior.nu, self.scale_prior.scale)?;
        HalfT::new(self.l_diag_prior.nu, self.l_diag_prior.scale)?;
        match self.kappa_prior {
            KappaPrior::HalfT(h) => {
                HalfT::new(h.nu, h.scale)?;
            }
            KappaPrior::Uniform { lower, upper } => {
                KappaPrior::uniform(lower, upper)?;
            }
        }
        Ok(())
    }
}
