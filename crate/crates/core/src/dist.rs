//! Quantile-parameterized error kernels.
//!
//! Both families place their location `mu` at the `p0`-th quantile. The skew Laplace
//! (SL) kernel has a single scale; the skew exponential power (SEP) kernel adds
//! independent left and right tail shapes. Ties `y == mu` always take the left branch.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{
    inc_gamma_pair, inv_reg_lower_inc_gamma, ln_gamma_unchecked, ln_inc_gamma_pair,
};
use crate::stats::log_diff_exp;

/// Target quantile level, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(p0: f64) -> Result<Self> {
        if p0 > 0.0 && p0 < 1.0 {
            Ok(QuantileLevel(p0))
        } else {
            Err(Error::domain(format!(
                "quantile level must lie in (0, 1), got {p0}"
            )))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        QuantileLevel::new(v)
    }
}

impl From<QuantileLevel> for f64 {
    fn from(q: QuantileLevel) -> f64 {
        q.0
    }
}

/// `K = kappa^(-1/kappa) / (2 Gamma(1 + 1/kappa))`, the SEP normalizing constant.
pub fn sep_norm_constant(kappa: f64) -> Result<f64> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::domain(format!(
            "tail shape must be positive, got {kappa}"
        )));
    }
    Ok(norm_constant_unchecked(kappa))
}

fn norm_constant_unchecked(kappa: f64) -> f64 {
    let inv = 1.0 / kappa;
    (-inv * kappa.ln() - ln_gamma_unchecked(1.0 + inv)).exp() / 2.0
}

fn check_unit_open(u: f64) -> Result<()> {
    if u > 0.0 && u < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "probability must lie in (0, 1), got {u}"
        )))
    }
}

fn check_location(mu: f64) -> Result<()> {
    if mu.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("location must be finite, got {mu}")))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

/// Skew Laplace kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlParams {
    mu: f64,
    sigma: f64,
    p0: QuantileLevel,
    // rates of the left and right exponential tails
    left_rate: f64,
    right_rate: f64,
    ln_density_at_mu: f64,
}

impl SlParams {
    pub fn new(mu: f64, sigma: f64, p0: QuantileLevel) -> Result<Self> {
        check_location(mu)?;
        check_positive("sigma", sigma)?;
        let p = p0.value();
        Ok(SlParams {
            mu,
            sigma,
            p0,
            left_rate: 2.0 * (1.0 - p) / sigma,
            right_rate: 2.0 * p / sigma,
            ln_density_at_mu: (2.0 * p * (1.0 - p) / sigma).ln(),
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn p0(&self) -> QuantileLevel {
        self.p0
    }

    /// Same shape with a new location. The location is not validated so that a
    /// non-finite link value can flow through to a `-inf` likelihood.
    #[inline]
    pub fn with_location(&self, mu: f64) -> Self {
        SlParams { mu, ..*self }
    }

    #[inline]
    pub fn ln_pdf(&self, y: f64) -> f64 {
        let d = y - self.mu;
        if d <= 0.0 {
            self.ln_density_at_mu + self.left_rate * d
        } else {
            self.ln_density_at_mu - self.right_rate * d
        }
    }

    pub fn cdf(&self, y: f64) -> f64 {
        self.cdf_pair(y).0
    }

    /// `(F(y), 1 - F(y))`.
    pub fn cdf_pair(&self, y: f64) -> (f64, f64) {
        let d = y - self.mu;
        let p = self.p0.value();
        if d <= 0.0 {
            let f = p * (self.left_rate * d).exp();
            (f, 1.0 - f)
        } else {
            let s = (1.0 - p) * (-self.right_rate * d).exp();
            (1.0 - s, s)
        }
    }

    /// `(ln F(y), ln(1 - F(y)))`.
    pub fn ln_cdf_pair(&self, y: f64) -> (f64, f64) {
        let d = y - self.mu;
        let p = self.p0.value();
        if d <= 0.0 {
            let ln_f = p.ln() + self.left_rate * d;
            (ln_f, (-ln_f.exp()).ln_1p())
        } else {
            let ln_s = (1.0 - p).ln() - self.right_rate * d;
            ((-ln_s.exp()).ln_1p(), ln_s)
        }
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        check_unit_open(u)?;
        Ok(self.quantile_unchecked(u))
    }

    fn quantile_unchecked(&self, u: f64) -> f64 {
        let p = self.p0.value();
        if u <= p {
            self.mu + (u / p).ln() / self.left_rate
        } else {
            self.mu - ((1.0 - u) / (1.0 - p)).ln() / self.right_rate
        }
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                return self.quantile_unchecked(u);
            }
        }
    }
}

/// Skew exponential power kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SepParams {
    mu: f64,
    sigma: f64,
    kappa1: f64,
    kappa2: f64,
    p0: QuantileLevel,
    k1: f64,
    k2: f64,
    // 2 p0 sigma K1 and 2 (1 - p0) sigma K2
    left_scale: f64,
    right_scale: f64,
    ln_sigma: f64,
}

impl SepParams {
    pub fn new(mu: f64, sigma: f64, kappa1: f64, kappa2: f64, p0: QuantileLevel) -> Result<Self> {
        check_location(mu)?;
        check_positive("sigma", sigma)?;
        check_positive("kappa1", kappa1)?;
        check_positive("kappa2", kappa2)?;
        let k1 = norm_constant_unchecked(kappa1);
        let k2 = norm_constant_unchecked(kappa2);
        if !(k1 > 0.0 && k1.is_finite() && k2 > 0.0 && k2.is_finite()) {
            return Err(Error::domain(format!(
                "normalizing constants not finite for kappa1={kappa1}, kappa2={kappa2}"
            )));
        }
        let p = p0.value();
        Ok(SepParams {
            mu,
            sigma,
            kappa1,
            kappa2,
            p0,
            k1,
            k2,
            left_scale: 2.0 * p * sigma * k1,
            right_scale: 2.0 * (1.0 - p) * sigma * k2,
            ln_sigma: sigma.ln(),
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn kappa1(&self) -> f64 {
        self.kappa1
    }

    pub fn kappa2(&self) -> f64 {
        self.kappa2
    }

    pub fn p0(&self) -> QuantileLevel {
        self.p0
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn k2(&self) -> f64 {
        self.k2
    }

    #[inline]
    pub fn with_location(&self, mu: f64) -> Self {
        SepParams { mu, ..*self }
    }

    #[inline]
    pub fn ln_pdf(&self, y: f64) -> f64 {
        if y <= self.mu {
            let z = (self.mu - y) / self.left_scale;
            -self.ln_sigma - z.powf(self.kappa1) / self.kappa1
        } else {
            let z = (y - self.mu) / self.right_scale;
            -self.ln_sigma - z.powf(self.kappa2) / self.kappa2
        }
    }

    // Incomplete-gamma argument and shape for the branch containing y.
    #[inline]
    fn gamma_argument(&self, y: f64) -> (bool, f64, f64) {
        if y <= self.mu {
            let z = (self.mu - y) / self.left_scale;
            (true, z.powf(self.kappa1) / self.kappa1, 1.0 / self.kappa1)
        } else {
            let z = (y - self.mu) / self.right_scale;
            (false, z.powf(self.kappa2) / self.kappa2, 1.0 / self.kappa2)
        }
    }

    pub fn cdf(&self, y: f64) -> f64 {
        self.cdf_pair(y).0
    }

    /// `(F(y), 1 - F(y))`.
    pub fn cdf_pair(&self, y: f64) -> (f64, f64) {
        let p = self.p0.value();
        let (left, a, b) = self.gamma_argument(y);
        let (lower, upper) = inc_gamma_pair(a, b);
        if left {
            let f = p * upper;
            (f, 1.0 - f)
        } else {
            let s = (1.0 - p) * upper;
            (p + (1.0 - p) * lower, s)
        }
    }

    /// `(ln F(y), ln(1 - F(y)))`, accurate far into either tail.
    pub fn ln_cdf_pair(&self, y: f64) -> (f64, f64) {
        let p = self.p0.value();
        let (left, a, b) = self.gamma_argument(y);
        let (_, ln_upper) = ln_inc_gamma_pair(a, b);
        if left {
            let ln_f = p.ln() + ln_upper;
            (ln_f, (-ln_f.exp()).ln_1p())
        } else {
            let ln_s = (1.0 - p).ln() + ln_upper;
            ((-ln_s.exp()).ln_1p(), ln_s)
        }
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        check_unit_open(u)?;
        let p = self.p0.value();
        if u <= p {
            let w = inv_reg_lower_inc_gamma(1.0 - u / p, 1.0 / self.kappa1)?;
            Ok(self.mu - self.left_scale * (self.kappa1 * w).powf(1.0 / self.kappa1))
        } else {
            let w = inv_reg_lower_inc_gamma((u - p) / (1.0 - p), 1.0 / self.kappa2)?;
            Ok(self.mu + self.right_scale * (self.kappa2 * w).powf(1.0 / self.kappa2))
        }
    }

    /// Side-selection draw: left with probability `p0`, then a gamma variate mapped
    /// through the branch's power transform.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let (kappa, scale, sign) = if u < self.p0.value() {
            (self.kappa1, self.left_scale, -1.0)
        } else {
            (self.kappa2, self.right_scale, 1.0)
        };
        let w = Gamma::new(1.0 / kappa, 1.0)
            .expect("validated shape")
            .sample(rng);
        self.mu + sign * scale * (kappa * w).powf(1.0 / kappa)
    }
}

/// Either kernel, as used by the likelihood and by the simulators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorKernel {
    Sl(SlParams),
    Sep(SepParams),
}

impl ErrorKernel {
    #[inline]
    pub fn with_location(&self, mu: f64) -> Self {
        match self {
            ErrorKernel::Sl(p) => ErrorKernel::Sl(p.with_location(mu)),
            ErrorKernel::Sep(p) => ErrorKernel::Sep(p.with_location(mu)),
        }
    }

    pub fn mu(&self) -> f64 {
        match self {
            ErrorKernel::Sl(p) => p.mu(),
            ErrorKernel::Sep(p) => p.mu(),
        }
    }

    #[inline]
    pub fn ln_pdf(&self, y: f64) -> f64 {
        match self {
            ErrorKernel::Sl(p) => p.ln_pdf(y),
            ErrorKernel::Sep(p) => p.ln_pdf(y),
        }
    }

    pub fn cdf_pair(&self, y: f64) -> (f64, f64) {
        match self {
            ErrorKernel::Sl(p) => p.cdf_pair(y),
            ErrorKernel::Sep(p) => p.cdf_pair(y),
        }
    }

    pub fn ln_cdf_pair(&self, y: f64) -> (f64, f64) {
        match self {
            ErrorKernel::Sl(p) => p.ln_cdf_pair(y),
            ErrorKernel::Sep(p) => p.ln_cdf_pair(y),
        }
    }

    pub fn ln_cdf(&self, y: f64) -> f64 {
        self.ln_cdf_pair(y).0
    }

    pub fn ln_sf(&self, y: f64) -> f64 {
        self.ln_cdf_pair(y).1
    }

    /// `ln(F(upper) - F(lower))`.
    pub fn ln_interval(&self, lower: f64, upper: f64) -> f64 {
        if !(lower < upper) {
            return f64::NEG_INFINITY;
        }
        let mu = self.mu();
        if upper <= mu {
            log_diff_exp(self.ln_cdf(upper), self.ln_cdf(lower))
        } else if lower > mu {
            log_diff_exp(self.ln_sf(lower), self.ln_sf(upper))
        } else {
            let (_, s_upper) = self.cdf_pair(upper);
            let (f_lower, _) = self.cdf_pair(lower);
            let mass = 1.0 - s_upper - f_lower;
            if mass > 0.0 {
                mass.ln()
            } else {
                f64::NEG_INFINITY
            }
        }
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        match self {
            ErrorKernel::Sl(p) => p.quantile(u),
            ErrorKernel::Sep(p) => p.quantile(u),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ErrorKernel::Sl(p) => p.sample(rng),
            ErrorKernel::Sep(p) => p.sample(rng),
        }
    }
}
