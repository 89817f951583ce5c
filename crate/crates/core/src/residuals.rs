//! Posterior-predictive scaled residuals for uncensored rows and a Kolmogorov-Smirnov
//! uniformity check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ModelSpec};
use crate::parallel::map_indexed;
use crate::sampler::PosteriorDraws;

pub const DEFAULT_N_SIMS: usize = 250;

/// Replicate datasets, one per evenly spaced posterior draw, with fresh random effects
/// drawn from that draw's `Sigma_v`. Returns an `n_sims x n_obs` matrix in dataset row
/// order.
pub fn simulate_replicates(
    draws: &PosteriorDraws,
    data: &Dataset,
    spec: &ModelSpec,
    n_sims: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if draws.n_draws() == 0 {
        return Err(Error::config("no posterior draws to simulate from"));
    }
    let layout = spec.layout(data.n_subjects());
    let picks = draws.evenly_spaced(n_sims);
    map_indexed(picks.len(), |s| {
        let theta = layout.theta_from_row(&draws.rows()[picks[s]])?;
        let kernel = theta.error_kernel(spec.p0)?;
        let gamma = theta.fixed.gamma.unwrap_or(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        let q = theta.q();
        let mut z = vec![0.0; q];
        let mut out = Vec::with_capacity(data.n_obs());
        for i in 0..data.n_subjects() {
            z.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
            let v = theta.l_v.sample_effect(&z);
            for obs in data.subject(i) {
                let mu =
                    spec.link
                        .evaluate(obs.time, &obs.covariates, &theta.fixed.beta, gamma, &v);
                out.push(kernel.with_location(mu).sample(&mut rng));
            }
        }
        Ok(out)
    })
    .into_iter()
    .collect()
}

/// `r = (#{sim < y} + U (#{sim = y} + 1)) / (n_sims + 1)` per observation.
/// `replicates[s][k]` is simulation `s` of observation `k`.
pub fn scaled_residuals<R: Rng + ?Sized>(
    observed: &[f64],
    replicates: &[Vec<f64>],
    rng: &mut R,
) -> Result<Vec<f64>> {
    if let Some(bad) = replicates.iter().find(|r| r.len() != observed.len()) {
        return Err(Error::Dimension {
            expected: observed.len(),
            actual: bad.len(),
        });
    }
    let denom = replicates.len() as f64 + 1.0;
    Ok(observed
        .iter()
        .enumerate()
        .map(|(k, &y)| {
            let below = replicates.iter().filter(|r| r[k] < y).count() as f64;
            let ties = replicates.iter().filter(|r| r[k] == y).count() as f64;
            let u: f64 = rng.random();
            (below + u * (ties + 1.0)) / denom
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityTest {
    pub n: usize,
    pub ks_statistic: f64,
    pub p_value: f64,
    /// `(k / (n + 1), r_(k))` pairs, sorted.
    pub qq: Vec<(f64, f64)>,
}

/// Asymptotic Kolmogorov tail probability `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        // the alternating series converges slowly here; the tail is 1 to double precision
        return 1.0;
    }
    let mut total = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        total += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * total).clamp(0.0, 1.0)
}

/// One-sample KS test against Uniform(0, 1).
pub fn uniformity_test(residuals: &[f64]) -> Result<UniformityTest> {
    let n = residuals.len();
    if n < 10 {
        return Err(Error::config(format!(
            "uniformity test needs at least 10 residuals, got {n}"
        )));
    }
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, &r)| ((i as f64 + 1.0) / nf - r).max(r - i as f64 / nf))
        .fold(0.0, f64::max);
    let sqrt_n = nf.sqrt();
    let p_value = kolmogorov_sf((sqrt_n + 0.12 + 0.11 / sqrt_n) * d);
    let qq = sorted
        .iter()
        .enumerate()
        .map(|(i, &r)| ((i as f64 + 1.0) / (nf + 1.0), r))
        .collect();
    Ok(UniformityTest {
        n,
        ks_statistic: d,
        p_value,
        qq,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Dataset row indices of the uncensored observations.
    pub rows: Vec<usize>,
    pub residuals: Vec<f64>,
    pub test: UniformityTest,
    pub n_sims: usize,
}

/// Simulates replicates, keeps uncensored rows and tests their residuals.
pub fn residual_report(
    draws: &PosteriorDraws,
    data: &Dataset,
    spec: &ModelSpec,
    n_sims: usize,
    seed: u64,
) -> Result<ResidualReport> {
    let sims = simulate_replicates(draws, data, spec, n_sims, seed)?;
    let rows: Vec<usize> = data
        .observations()
        .iter()
        .enumerate()
        .filter(|(_, o)| o.censor.is_observed())
        .map(|(k, _)| k)
        .collect();
    let observed: Vec<f64> = rows
        .iter()
        .map(|&k| data.observations()[k].response)
        .collect();
    let replicates: Vec<Vec<f64>> = sims
        .iter()
        .map(|s| rows.iter().map(|&k| s[k]).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let residuals = scaled_residuals(&observed, &replicates, &mut rng)?;
    let test = uniformity_test(&residuals)?;
    Ok(ResidualReport {
        rows,
        residuals,
        test,
        n_sims: sims.len(),
    })
}
