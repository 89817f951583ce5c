//! Model specification, the constrained parameter bundle and its flat unconstrained
//! encoding.
//!
//! Unconstrained layout: `beta`, `gamma` (biexponential only), `log sigma`, the two
//! transformed tail shapes (SEP only), `log diag(L_v)`, the strictly lower entries of
//! `L_v` row by row, then every subject's random effects stacked.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::link::{FixedEffects, LinkFunction};
use super::prior::{KappaPrior, PriorSpec};
use crate::dist::{ErrorKernel, QuantileLevel, SepParams, SlParams};
use crate::error::{Error, Result};
use crate::stats::LN_2PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Sl,
    Sep,
}

impl KernelKind {
    pub fn label(&self) -> &'static str {
        match self {
            KernelKind::Sl => "sl",
            KernelKind::Sep => "sep",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sl" | "skl" => Ok(KernelKind::Sl),
            "sep" => Ok(KernelKind::Sep),
            other => Err(Error::config(format!("unknown kernel `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub link: LinkFunction,
    pub kernel: KernelKind,
    pub p0: QuantileLevel,
    pub priors: PriorSpec,
}

impl ModelSpec {
    pub fn new(
        link: LinkFunction,
        kernel: KernelKind,
        p0: QuantileLevel,
        priors: PriorSpec,
    ) -> Result<Self> {
        priors.validate()?;
        Ok(ModelSpec {
            link,
            kernel,
            p0,
            priors,
        })
    }

    pub fn layout(&self, n_subjects: usize) -> ParamLayout {
        ParamLayout::new(self, n_subjects)
    }
}

/// Lower-triangular `L_v` with `Sigma_v^{-1} = L_v L_v^T`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionCholesky {
    q: usize,
    l: Vec<f64>,
}

impl PrecisionCholesky {
    /// `entries` is the full row-major `q x q` matrix; the upper triangle must be zero.
    pub fn new(q: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != q * q {
            return Err(Error::Dimension {
                expected: q * q,
                actual: entries.len(),
            });
        }
        for i in 0..q {
            if !(entries[i * q + i] > 0.0) {
                return Err(Error::domain(format!(
                    "L_v diagonal entry {i} must be positive"
                )));
            }
            for j in i + 1..q {
                if entries[i * q + j] != 0.0 {
                    return Err(Error::domain("L_v must be lower triangular"));
                }
            }
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("L_v entries must be finite"));
        }
        Ok(PrecisionCholesky { q, l: entries })
    }

    pub fn identity(q: usize) -> Self {
        Self::from_diagonal(&vec![1.0; q])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let q = diag.len();
        let mut l = vec![0.0; q * q];
        for (i, d) in diag.iter().enumerate() {
            l[i * q + i] = *d;
        }
        PrecisionCholesky { q, l }
    }

    pub fn dim(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.q + j]
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, value: f64) {
        self.l[i * self.q + j] = value;
    }

    pub fn log_diag_sum(&self) -> f64 {
        (0..self.q).map(|i| self.get(i, i).ln()).sum()
    }

    /// `||L^T v||^2`
    #[inline]
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let q = self.q;
        let mut total = 0.0;
        for j in 0..q {
            let mut s = 0.0;
            for i in j..q {
                s += self.l[i * q + j] * v[i];
            }
            total += s * s;
        }
        total
    }

    /// Maps standard normal `z` to `v ~ N(0, (L L^T)^{-1})` by solving `L^T v = z`.
    pub fn sample_effect(&self, z: &[f64]) -> Vec<f64> {
        let q = self.q;
        let mut v = vec![0.0; q];
        for j in (0..q).rev() {
            let mut s = z[j];
            for i in j + 1..q {
                s -= self.l[i * q + j] * v[i];
            }
            v[j] = s / self.l[j * q + j];
        }
        v
    }

    /// Dense covariance `(L L^T)^{-1}`, row-major.
    pub fn covariance(&self) -> Vec<f64> {
        let q = self.q;
        let mut cov = vec![0.0; q * q];
        for k in 0..q {
            let mut e = vec![0.0; q];
            e[k] = 1.0;
            // column k of L^{-T} L^{-1}: first solve L y = e_k, then L^T x = y
            let mut y = vec![0.0; q];
            for i in 0..q {
                let mut s = e[i];
                for j in 0..i {
                    s -= self.l[i * q + j] * y[j];
                }
                y[i] = s / self.l[i * q + i];
            }
            let x = self.sample_effect(&y);
            for i in 0..q {
                cov[i * q + k] = x[i];
            }
        }
        cov
    }
}

/// `ln N(v | 0, Sigma_v)` computed from the precision factor alone.
#[inline]
pub fn random_effects_logdensity(v: &[f64], l_v: &PrecisionCholesky) -> f64 {
    l_v.log_diag_sum() - 0.5 * l_v.q as f64 * LN_2PI - 0.5 * l_v.quad_form(v)
}

/// Constrained parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub fixed: FixedEffects,
    pub sigma: f64,
    /// `(kappa1, kappa2)` for the SEP kernel.
    pub kappa: Option<(f64, f64)>,
    pub l_v: PrecisionCholesky,
    /// Random effects, `n_subjects * q`, subject-major.
    pub v: Vec<f64>,
}

impl Theta {
    pub fn q(&self) -> usize {
        self.l_v.dim()
    }

    pub fn v_i(&self, i: usize) -> &[f64] {
        let q = self.q();
        &self.v[i * q..(i + 1) * q]
    }

    pub fn n_subjects(&self) -> usize {
        self.v.len() / self.q()
    }

    pub fn error_kernel(&self, p0: QuantileLevel) -> Result<ErrorKernel> {
        Ok(match self.kappa {
            None => ErrorKernel::Sl(SlParams::new(0.0, self.sigma, p0)?),
            Some((k1, k2)) => ErrorKernel::Sep(SepParams::new(0.0, self.sigma, k1, k2, p0)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KappaTransform {
    Log,
    /// `kappa = lower + (upper - lower) * logistic(z)`
    Logit {
        lower: f64,
        upper: f64,
    },
}

impl KappaTransform {
    fn from_prior(prior: &KappaPrior) -> Self {
        match *prior {
            KappaPrior::HalfT(_) => KappaTransform::Log,
            KappaPrior::Uniform { lower, upper } => KappaTransform::Logit { lower, upper },
        }
    }

    /// Constrained value and log-Jacobian.
    #[inline]
    pub fn forward(&self, z: f64) -> (f64, f64) {
        match *self {
            KappaTransform::Log => (z.exp(), z),
            KappaTransform::Logit { lower, upper } => {
                let s = logistic(z);
                let ln_jac = (upper - lower).ln() - softplus(-z) - softplus(z);
                (lower + (upper - lower) * s, ln_jac)
            }
        }
    }

    pub fn inverse(&self, kappa: f64) -> Result<f64> {
        match *self {
            KappaTransform::Log => {
                if kappa > 0.0 {
                    Ok(kappa.ln())
                } else {
                    Err(Error::domain(format!(
                        "kappa must be positive, got {kappa}"
                    )))
                }
            }
            KappaTransform::Logit { lower, upper } => {
                if kappa > lower && kappa < upper {
                    let s = (kappa - lower) / (upper - lower);
                    Ok((s / (1.0 - s)).ln())
                } else {
                    Err(Error::domain(format!(
                        "kappa {kappa} outside ({lower}, {upper})"
                    )))
                }
            }
        }
    }
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    link: LinkFunction,
    n_beta: usize,
    has_gamma: bool,
    has_kappa: bool,
    kappa_transform: KappaTransform,
    q: usize,
    n_subjects: usize,
}

impl ParamLayout {
    pub fn new(spec: &ModelSpec, n_subjects: usize) -> Self {
        ParamLayout {
            link: spec.link,
            n_beta: spec.link.n_beta(),
            has_gamma: spec.link.has_gamma(),
            has_kappa: spec.kernel == KernelKind::Sep,
            kappa_transform: KappaTransform::from_prior(&spec.priors.kappa_prior),
            q: spec.link.re_dim(),
            n_subjects,
        }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn kappa_transform(&self) -> KappaTransform {
        self.kappa_transform
    }

    pub fn beta(&self) -> Range<usize> {
        0..self.n_beta
    }

    pub fn gamma(&self) -> Option<usize> {
        self.has_gamma.then_some(self.n_beta)
    }

    /// Fixed-effect block: beta followed by gamma when present.
    pub fn fixed(&self) -> Range<usize> {
        0..self.n_beta + self.has_gamma as usize
    }

    pub fn log_sigma(&self) -> usize {
        self.fixed().end
    }

    pub fn kappa(&self) -> Option<Range<usize>> {
        let start = self.log_sigma() + 1;
        self.has_kappa.then_some(start..start + 2)
    }

    /// Error-model block: log sigma and, for SEP, both tail shapes.
    pub fn error(&self) -> Range<usize> {
        self.log_sigma()..self.log_sigma() + 1 + 2 * self.has_kappa as usize
    }

    pub fn l_diag(&self) -> Range<usize> {
        let start = self.error().end;
        start..start + self.q
    }

    pub fn l_offdiag(&self) -> Range<usize> {
        let start = self.l_diag().end;
        start..start + self.q * (self.q - 1) / 2
    }

    /// All `L_v` coordinates.
    pub fn l_v(&self) -> Range<usize> {
        self.l_diag().start..self.l_offdiag().end
    }

    pub fn v(&self, subject: usize) -> Range<usize> {
        let start = self.l_offdiag().end + subject * self.q;
        start..start + self.q
    }

    pub fn v_all(&self) -> Range<usize> {
        let start = self.l_offdiag().end;
        start..start + self.n_subjects * self.q
    }

    pub fn dim(&self) -> usize {
        self.v_all().end
    }

    /// Decodes `L_v` from the unconstrained vector; returns it with its log-Jacobian.
    pub fn decode_l_v(&self, unc: &[f64]) -> (PrecisionCholesky, f64) {
        let q = self.q;
        let mut l = PrecisionCholesky::from_diagonal(&vec![1.0; q]);
        let mut ln_jac = 0.0;
        for (i, k) in self.l_diag().enumerate() {
            l.set(i, i, unc[k].exp());
            ln_jac += unc[k];
        }
        let mut k = self.l_offdiag().start;
        for i in 1..q {
            for j in 0..i {
                l.set(i, j, unc[k]);
                k += 1;
            }
        }
        (l, ln_jac)
    }

    /// Decodes `(sigma, kappa)`; returns them with their log-Jacobian.
    #[inline]
    pub fn decode_error(&self, unc: &[f64]) -> (f64, Option<(f64, f64)>, f64) {
        let z = unc[self.log_sigma()];
        let sigma = z.exp();
        let mut ln_jac = z;
        let kappa = self.kappa().map(|r| {
            let (k1, j1) = self.kappa_transform.forward(unc[r.start]);
            let (k2, j2) = self.kappa_transform.forward(unc[r.start + 1]);
            ln_jac += j1 + j2;
            (k1, k2)
        });
        (sigma, kappa, ln_jac)
    }

    /// Constrained parameters and the total log-Jacobian of the transform.
    pub fn constrain(&self, unc: &[f64]) -> Result<(Theta, f64)> {
        if unc.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: unc.len(),
            });
        }
        let beta = unc[self.beta()].to_vec();
        let gamma = self.gamma().map(|k| unc[k]);
        let (sigma, kappa, jac_err) = self.decode_error(unc);
        let (l_v, jac_l) = self.decode_l_v(unc);
        let theta = Theta {
            fixed: FixedEffects { beta, gamma },
            sigma,
            kappa,
            l_v,
            v: unc[self.v_all()].to_vec(),
        };
        Ok((theta, jac_err + jac_l))
    }

    pub fn unconstrain(&self, theta: &Theta) -> Result<Vec<f64>> {
        if theta.fixed.beta.len() != self.n_beta {
            return Err(Error::Dimension {
                expected: self.n_beta,
                actual: theta.fixed.beta.len(),
            });
        }
        if theta.fixed.gamma.is_some() != self.has_gamma || theta.kappa.is_some() != self.has_kappa
        {
            return Err(Error::domain(
                "parameter bundle does not match the model layout",
            ));
        }
        if theta.l_v.dim() != self.q || theta.v.len() != self.n_subjects * self.q {
            return Err(Error::Dimension {
                expected: self.n_subjects * self.q,
                actual: theta.v.len(),
            });
        }
        if !(theta.sigma > 0.0) {
            return Err(Error::domain("sigma must be positive"));
        }
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(&theta.fixed.beta);
        if let Some(g) = theta.fixed.gamma {
            out.push(g);
        }
        out.push(theta.sigma.ln());
        if let Some((k1, k2)) = theta.kappa {
            out.push(self.kappa_transform.inverse(k1)?);
            out.push(self.kappa_transform.inverse(k2)?);
        }
        for i in 0..self.q {
            out.push(theta.l_v.get(i, i).ln());
        }
        for i in 1..self.q {
            for j in 0..i {
                out.push(theta.l_v.get(i, j));
            }
        }
        out.extend_from_slice(&theta.v);
        Ok(out)
    }

    /// Column names of the constrained draw table.
    pub fn names(&self) -> Vec<String> {
        let mut names = self.link.parameter_names();
        names.push("sigma".into());
        if self.has_kappa {
            names.push("kappa1".into());
            names.push("kappa2".into());
        }
        for i in 0..self.q {
            for j in 0..=i {
                names.push(format!("Lv[{},{}]", i + 1, j + 1));
            }
        }
        for s in 0..self.n_subjects {
            for k in 0..self.q {
                names.push(format!("v[{},{}]", s + 1, k + 1));
            }
        }
        names
    }

    /// Constrained values in [`ParamLayout::names`] order.
    pub fn constrained_row(&self, unc: &[f64]) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.names_len());
        row.extend_from_slice(&unc[self.fixed()]);
        let (sigma, kappa, _) = self.decode_error(unc);
        row.push(sigma);
        if let Some((k1, k2)) = kappa {
            row.push(k1);
            row.push(k2);
        }
        let (l, _) = self.decode_l_v(unc);
        for i in 0..self.q {
            for j in 0..=i {
                row.push(l.get(i, j));
            }
        }
        row.extend_from_slice(&unc[self.v_all()]);
        row
    }

    pub fn names_len(&self) -> usize {
        self.fixed().len()
            + 1
            + 2 * self.has_kappa as usize
            + self.q * (self.q + 1) / 2
            + self.n_subjects * self.q
    }

    /// Inverse of [`ParamLayout::constrained_row`].
    pub fn theta_from_row(&self, row: &[f64]) -> Result<Theta> {
        if row.len() != self.names_len() {
            return Err(Error::Dimension {
                expected: self.names_len(),
                actual: row.len(),
            });
        }
        let mut k = 0;
        let beta = row[..self.n_beta].to_vec();
        k += self.n_beta;
        let gamma = if self.has_gamma {
            k += 1;
            Some(row[k - 1])
        } else {
            None
        };
        let sigma = row[k];
        k += 1;
        let kappa = if self.has_kappa {
            k += 2;
            Some((row[k - 2], row[k - 1]))
        } else {
            None
        };
        let q = self.q;
        let mut entries = vec![0.0; q * q];
        for i in 0..q {
            for j in 0..=i {
                entries[i * q + j] = row[k];
                k += 1;
            }
        }
        let l_v = PrecisionCholesky::new(q, entries)?;
        Ok(Theta {
            fixed: FixedEffects { beta, gamma },
            sigma,
            kappa,
            l_v,
            v: row[k..].to_vec(),
        })
    }
}
