//! Split-chain R-hat and autocorrelation-based effective sample size.

use serde::{Deserialize, Serialize};

use super::draws::{BlockAcceptance, PosteriorDraws};
use crate::parallel::map_indexed;

/// Splits every chain into a first and second half, dropping the middle draw of an
/// odd-length chain.
pub fn split_chains(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(&c[..half]);
        out.push(&c[c.len() - half..]);
    }
    out
}

struct Moments {
    m: usize,
    n: usize,
    means: Vec<f64>,
    within: f64,
    var_plus: f64,
}

fn moments(halves: &[&[f64]]) -> Option<Moments> {
    let m = halves.len();
    let n = halves.first()?.len();
    if m < 2 || n < 2 || halves.iter().any(|h| h.len() != n) {
        return None;
    }
    let means: Vec<f64> = halves
        .iter()
        .map(|h| h.iter().sum::<f64>() / n as f64)
        .collect();
    let within = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n as f64 - 1.0))
        .sum::<f64>()
        / m as f64;
    let grand = means.iter().sum::<f64>() / m as f64;
    let between_over_n = means
        .iter()
        .map(|mu| (mu - grand) * (mu - grand))
        .sum::<f64>()
        / (m as f64 - 1.0);
    let var_plus = (n as f64 - 1.0) / n as f64 * within + between_over_n;
    if !(within > 0.0 && within.is_finite()) {
        return None;
    }
    Some(Moments {
        m,
        n,
        means,
        within,
        var_plus,
    })
}

/// Split-chain potential scale reduction. `None` when there are fewer than two
/// usable half-chains or the within-chain variance is zero.
pub fn rhat(chains: &[Vec<f64>]) -> Option<f64> {
    let halves = split_chains(chains);
    let mo = moments(&halves)?;
    Some((mo.var_plus / mo.within).sqrt())
}

/// Multi-chain effective sample size over split chains, with Geyer's initial monotone
/// sequence truncation. `None` under the same conditions as [`rhat`].
pub fn effective_sample_size(chains: &[Vec<f64>]) -> Option<f64> {
    let halves = split_chains(chains);
    let mo = moments(&halves)?;
    let (m, n) = (mo.m, mo.n);
    let acov_mean = |t: usize| -> f64 {
        halves
            .iter()
            .zip(&mo.means)
            .map(|(h, mu)| {
                (0..n - t)
                    .map(|i| (h[i] - mu) * (h[i + t] - mu))
                    .sum::<f64>()
                    / n as f64
            })
            .sum::<f64>()
            / m as f64
    };
    let rho = |t: usize| 1.0 - (mo.within - acov_mean(t)) / mo.var_plus;

    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        t += 2;
    }
    let total = (m * n) as f64;
    let tau = tau.max(1.0 / total.log10());
    Some(total / tau)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDiagnostics {
    pub name: String,
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
    /// Set when every retained draw is identical, so neither statistic exists.
    pub zero_variance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub parameters: Vec<ParameterDiagnostics>,
    pub blocks: Vec<BlockAcceptance>,
    pub max_rhat: Option<f64>,
    pub min_ess: Option<f64>,
    pub rhat_threshold: f64,
    pub converged: bool,
}

impl ConvergenceReport {
    pub const DEFAULT_THRESHOLD: f64 = 1.1;

    pub fn from_draws(draws: &PosteriorDraws, rhat_threshold: f64) -> Self {
        let names = draws.names();
        let parameters = map_indexed(names.len(), |k| {
            let chains = draws.chains_of(k);
            let r = rhat(&chains);
            ParameterDiagnostics {
                name: names[k].clone(),
                rhat: r,
                ess: effective_sample_size(&chains),
                zero_variance: r.is_none(),
            }
        });
        let max_rhat = parameters.iter().filter_map(|p| p.rhat).reduce(f64::max);
        let min_ess = parameters.iter().filter_map(|p| p.ess).reduce(f64::min);
        let converged = max_rhat.is_some_and(|r| r <= rhat_threshold);
        ConvergenceReport {
            parameters,
            blocks: draws.acceptance().to_vec(),
            max_rhat,
            min_ess,
            rhat_threshold,
            converged,
        }
    }

    pub fn get(&self, name: &str) -> Option<&ParameterDiagnostics> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn iid(seed: u64, m: usize, n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    }

    #[test]
    fn iid_chains() {
        let c = iid(1, 4, 2000);
        let r = rhat(&c).unwrap();
        assert!((0.99..=1.02).contains(&r), "{r}");
        let ess = effective_sample_size(&c).unwrap();
        assert!((ess / 8000.0 - 1.0).abs() < 0.2, "{ess}");
    }

    #[test]
    fn shifted_chains_diverge() {
        let mut c = iid(2, 2, 1000);
        c[1].iter_mut().for_each(|x| *x += 10.0);
        assert!(rhat(&c).unwrap() > 3.0);
    }

    #[test]
    fn constant_chain_is_flagged() {
        assert_eq!(rhat(&[vec![1.0; 10], vec![1.0; 10]]), None);
        assert_eq!(effective_sample_size(&[vec![2.0; 10]]), None);
    }

    #[test]
    fn odd_split_drops_middle() {
        let c = vec![vec![1.0, 2.0, 3.0, 4.0, 5.0]];
        let h = split_chains(&c);
        assert_eq!(h[0], &[1.0, 2.0]);
        assert_eq!(h[1], &[4.0, 5.0]);
    }
}
