//! Log marginal likelihood by iterative bridge sampling with a moment-matched normal
//! proposal on the unconstrained scale.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::QmmPosterior;
use crate::parallel::map_indexed;
use crate::sampler::PosteriorDraws;
use crate::stats::{log_add_exp, log_sum_exp, median, LN_2PI};

/// Multivariate normal `N(mean, L L^T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalProposal {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    ln_det: f64,
    /// Ridge added to the covariance diagonal to make it positive definite; zero when
    /// none was needed.
    pub jitter: f64,
}

impl NormalProposal {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_column_slice(x) - &self.mean;
        let z = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("non-singular factor");
        -0.5 * (self.dim() as f64 * LN_2PI + self.ln_det + z.norm_squared())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.mean + &self.chol * z).as_slice().to_vec()
    }
}

/// Moment-matches a normal to `draws`. A singular covariance gets a growing ridge
/// until the Cholesky factorization succeeds; the ridge is reported in `jitter`.
pub fn fit_proposal(draws: &[Vec<f64>]) -> Result<NormalProposal> {
    let n = draws.len();
    let d = draws.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(Error::config("proposal fit needs non-empty draws"));
    }
    if n < 2 * d {
        return Err(Error::config(format!(
            "proposal fit needs at least {} draws for dimension {d}, got {n}",
            2 * d
        )));
    }
    let mut mean = DVector::zeros(d);
    for x in draws {
        mean += DVector::from_column_slice(x);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for x in draws {
        let c = DVector::from_column_slice(x) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= n as f64 - 1.0;
    let scale = (cov.trace() / d as f64).max(f64::MIN_POSITIVE);
    let mut jitter = 0.0;
    loop {
        let mut m = cov.clone();
        for i in 0..d {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = m.cholesky() {
            let chol = ch.l();
            let ln_det = 2.0 * chol.diagonal().iter().map(|x| x.ln()).sum::<f64>();
            return Ok(NormalProposal {
                mean,
                chol,
                ln_det,
                jitter,
            });
        }
        jitter = if jitter == 0.0 {
            1e-10 * scale
        } else {
            jitter * 10.0
        };
        if jitter > 1e3 * scale || !jitter.is_finite() {
            return Err(Error::Numeric(
                "proposal covariance could not be regularized".into(),
            ));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BridgeConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Proposal draws; `None` matches the number of posterior draws.
    pub n_proposal: Option<usize>,
    pub seed: u64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        BridgeConfig {
            tol: 1e-10,
            max_iter: 1000,
            n_proposal: None,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeResult {
    pub log_ml: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n_proposal_draws: usize,
    pub n_posterior_draws: usize,
    pub proposal_jitter: f64,
}

/// Runs the optimal-bridge fixed point given `ln p~ - ln g` on posterior draws (`l1`)
/// and on proposal draws (`l2`). Returns `(log r, iterations, converged)`.
pub fn bridge_iterate(l1: &[f64], l2: &[f64], tol: f64, max_iter: usize) -> (f64, usize, bool) {
    let (n1, n2) = (l1.len() as f64, l2.len() as f64);
    let ln_s1 = (n1 / (n1 + n2)).ln();
    let ln_s2 = (n2 / (n1 + n2)).ln();
    // shift by the median for numerical range; added back at the end
    let shift = median(l1);
    let l1: Vec<f64> = l1.iter().map(|x| x - shift).collect();
    let l2: Vec<f64> = l2.iter().map(|x| x - shift).collect();
    let mut num = vec![0.0; l2.len()];
    let mut den = vec![0.0; l1.len()];
    let mut log_r = 0.0;
    for iter in 1..=max_iter {
        for (t, x) in num.iter_mut().zip(&l2) {
            *t = x - log_add_exp(ln_s1 + x, ln_s2 + log_r);
        }
        for (t, x) in den.iter_mut().zip(&l1) {
            *t = -log_add_exp(ln_s1 + x, ln_s2 + log_r);
        }
        let next = (log_sum_exp(&num) - n2.ln()) - (log_sum_exp(&den) - n1.ln());
        let change = (next - log_r).abs();
        log_r = next;
        if !log_r.is_finite() {
            return (log_r + shift, iter, false);
        }
        if change < tol {
            return (log_r + shift, iter, true);
        }
    }
    (log_r + shift, max_iter, false)
}

/// Bridge estimate of `ln integral p~`. `posterior_draws` must not overlap the draws
/// the proposal was fitted on.
pub fn bridge_log_ml<F>(
    posterior_draws: &[Vec<f64>],
    proposal: &NormalProposal,
    log_posterior: F,
    cfg: &BridgeConfig,
) -> Result<BridgeResult>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    if posterior_draws.is_empty() {
        return Err(Error::config("bridge sampling needs posterior draws"));
    }
    let n2 = cfg.n_proposal.unwrap_or(posterior_draws.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let proposal_draws: Vec<Vec<f64>> = (0..n2).map(|_| proposal.sample(&mut rng)).collect();
    let eval = |x: &[f64]| -> Result<f64> {
        let lp = log_posterior(x);
        if lp.is_nan() {
            return Err(Error::Numeric(
                "log-posterior is NaN during bridge sampling".into(),
            ));
        }
        Ok(lp - proposal.ln_pdf(x))
    };
    let l1 = map_indexed(posterior_draws.len(), |i| eval(&posterior_draws[i]))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let l2 = map_indexed(n2, |j| eval(&proposal_draws[j]))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    if l1.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(
            "posterior draw with non-finite log-posterior".into(),
        ));
    }
    let (log_ml, iterations, converged) = bridge_iterate(&l1, &l2, cfg.tol, cfg.max_iter);
    Ok(BridgeResult {
        log_ml,
        iterations,
        converged,
        n_proposal_draws: n2,
        n_posterior_draws: posterior_draws.len(),
        proposal_jitter: proposal.jitter,
    })
}

/// Splits each chain in half: first halves fit the proposal, second halves enter the
/// bridge iteration.
pub fn split_for_bridge(draws: &PosteriorDraws) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let unc = draws.unconstrained();
    if unc.len() != draws.n_draws() {
        return Err(Error::config(
            "draws carry no unconstrained values; attach the model layout first",
        ));
    }
    let mut fit = Vec::new();
    let mut iterate = Vec::new();
    for c in 0..draws.n_chains() {
        let rows: Vec<&Vec<f64>> = unc
            .iter()
            .zip(draws.chain_labels())
            .filter(|(_, &l)| l == c)
            .map(|(r, _)| r)
            .collect();
        let half = rows.len() / 2;
        fit.extend(rows[..half].iter().map(|r| (*r).clone()));
        iterate.extend(rows[half..].iter().map(|r| (*r).clone()));
    }
    Ok((fit, iterate))
}

/// Log marginal likelihood of a fitted quantile mixed-effects model.
pub fn estimate_log_ml(
    draws: &PosteriorDraws,
    posterior: &QmmPosterior,
    cfg: &BridgeConfig,
) -> Result<BridgeResult> {
    let (fit, iterate) = split_for_bridge(draws)?;
    let proposal = fit_proposal(&fit)?;
    bridge_log_ml(
        &iterate,
        &proposal,
        |x| posterior.log_posterior(x).unwrap_or(f64::NAN),
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proposal_equal_to_target() {
        // p~ = c g exactly: every ratio is ln c
        let c = 3.7f64;
        let l = vec![c; 50];
        let (log_r, iters, ok) = bridge_iterate(&l, &l, 1e-10, 1000);
        assert!(ok);
        assert!(iters <= 2);
        assert!((log_r - c).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_gets_jitter() {
        let draws: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let p = fit_proposal(&draws).unwrap();
        assert!(p.jitter > 0.0);
        assert!(p.covariance().cholesky().is_some());
    }

    #[test]
    fn too_few_draws() {
        assert!(fit_proposal(&[vec![0.0, 1.0], vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn normal_density_matches_closed_form() {
        let draws: Vec<Vec<f64>> = (0..400)
            .map(|i| vec![((i * 37) % 101) as f64 / 50.0])
            .collect();
        let p = fit_proposal(&draws).unwrap();
        let var = p.covariance()[(0, 0)];
        let x = 0.3;
        let expected = crate::stats::normal_logpdf(x, p.mean()[0], var);
        assert!((p.ln_pdf(&[x]) - expected).abs() < 1e-12);
    }
}
