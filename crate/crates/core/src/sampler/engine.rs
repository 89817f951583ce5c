//! Generic blocked random-walk Metropolis driver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adapt::BlockProposal;
use super::ChainConfig;
use crate::error::{Error, Result};

/// Description of one update block.
#[derive(Debug, Clone)]
pub struct BlockSpec {
    pub name: String,
    /// Initial proposal standard deviation per block coordinate.
    pub initial_sd: Vec<f64>,
    /// Learn an empirical proposal covariance from block positions during warmup.
    pub learn_covariance: bool,
}

impl BlockSpec {
    pub fn new(name: impl Into<String>, initial_sd: Vec<f64>, learn_covariance: bool) -> Self {
        BlockSpec {
            name: name.into(),
            initial_sd,
            learn_covariance,
        }
    }

    pub fn dim(&self) -> usize {
        self.initial_sd.len()
    }
}

/// A target density split into blocks. A block move is an additive random-walk
/// increment `delta` whose meaning is defined by the target; the target returns the
/// exact change in log density and applies the move on acceptance.
pub trait BlockedTarget: Sync {
    type State: Clone + Send;
    type Pending: Send;

    fn dim(&self) -> usize;
    fn blocks(&self) -> Vec<BlockSpec>;

    /// Starting point for `chain`; `rng` is that chain's generator.
    fn initial_point(&self, chain: usize, attempt: usize, rng: &mut ChaCha8Rng) -> Vec<f64>;

    /// Builds the state, or explains which component is out of support.
    fn init_state(&self, unconstrained: Vec<f64>) -> std::result::Result<Self::State, String>;

    fn new_pending(&self) -> Self::Pending;
    fn unconstrained<'s>(&self, state: &'s Self::State) -> &'s [f64];
    fn log_density(&self, state: &Self::State) -> f64;

    /// Current block coordinates, used to learn the proposal covariance.
    fn block_position(&self, state: &Self::State, block: usize, out: &mut [f64]);

    /// Log-density difference of moving `block` by `delta`; fills `pending`.
    fn propose(
        &self,
        state: &Self::State,
        block: usize,
        delta: &[f64],
        pending: &mut Self::Pending,
    ) -> f64;

    fn commit(&self, state: &mut Self::State, block: usize, pending: &mut Self::Pending);
}

/// Output of one chain, unconstrained scale.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub draws: Vec<Vec<f64>>,
    pub log_density: Vec<f64>,
    /// Post-warmup acceptance rate per block.
    pub acceptance: Vec<f64>,
}

pub(crate) fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64 + 1);
    rng
}

const INIT_ATTEMPTS: usize = 100;

fn initialize<T: BlockedTarget>(
    target: &T,
    chain: usize,
    rng: &mut ChaCha8Rng,
) -> Result<T::State> {
    let mut last_reason = String::new();
    for attempt in 0..INIT_ATTEMPTS {
        let point = target.initial_point(chain, attempt, rng);
        if point.len() != target.dim() {
            return Err(Error::Dimension {
                expected: target.dim(),
                actual: point.len(),
            });
        }
        match target.init_state(point) {
            Ok(state) => return Ok(state),
            Err(reason) => last_reason = reason,
        }
    }
    Err(Error::Initialization(format!(
        "chain {chain}: log-posterior is -inf at all {INIT_ATTEMPTS} starting points ({last_reason})"
    )))
}

/// Runs one chain: warmup with adaptation, then a fixed-kernel sampling phase.
pub fn run_chain<T: BlockedTarget>(
    target: &T,
    cfg: &ChainConfig,
    chain: usize,
) -> Result<ChainOutput> {
    let mut rng = chain_rng(cfg.seed, chain);
    let mut state = initialize(target, chain, &mut rng)?;
    let blocks = target.blocks();
    let mut proposals: Vec<BlockProposal> = blocks
        .iter()
        .map(|b| {
            let rate = if b.dim() == 1 {
                cfg.target_accept_scalar
            } else {
                cfg.target_accept_multi
            };
            BlockProposal::new(&b.initial_sd, rate, b.learn_covariance)
        })
        .collect();
    let max_dim = blocks.iter().map(BlockSpec::dim).max().unwrap_or(1);
    let mut delta = vec![0.0; max_dim];
    let mut position = vec![0.0; max_dim];
    let mut pending = target.new_pending();

    // Covariance refreshes at 20%, 40%, 60% and 80% of warmup; the last stretch only
    // tunes scales.
    let checkpoints: Vec<usize> = (1..=4)
        .map(|k| cfg.n_warmup * k / 5)
        .filter(|&c| c > 0)
        .collect();

    let total = cfg.n_warmup + cfg.n_keep * cfg.thin;
    let mut accepted = vec![0usize; blocks.len()];
    let mut draws = Vec::with_capacity(cfg.n_keep);
    let mut log_density = Vec::with_capacity(cfg.n_keep);

    for iter in 0..total {
        let warmup = iter < cfg.n_warmup;
        for (b, prop) in proposals.iter_mut().enumerate() {
            let d = prop.dim();
            prop.draw(&mut rng, &mut delta[..d]);
            let log_ratio = target.propose(&state, b, &delta[..d], &mut pending);
            if log_ratio.is_nan() {
                return Err(Error::Numeric(format!(
                    "NaN log-density ratio in block `{}`",
                    blocks[b].name
                )));
            }
            let accept_prob = log_ratio.min(0.0).exp();
            let accept = log_ratio >= 0.0 || rng.random::<f64>() < accept_prob;
            if accept {
                target.commit(&mut state, b, &mut pending);
            }
            if warmup {
                prop.adapt_scale(accept_prob);
                target.block_position(&state, b, &mut position[..d]);
                prop.observe(&position[..d]);
            } else if accept {
                accepted[b] += 1;
            }
        }
        if warmup && checkpoints.contains(&(iter + 1)) {
            for prop in proposals.iter_mut() {
                prop.update_covariance();
            }
        }
        if !warmup && (iter - cfg.n_warmup + 1) % cfg.thin == 0 {
            draws.push(target.unconstrained(&state).to_vec());
            log_density.push(target.log_density(&state));
        }
    }

    let n_sampling = (cfg.n_keep * cfg.thin).max(1) as f64;
    let acceptance = accepted.iter().map(|&a| a as f64 / n_sampling).collect();
    Ok(ChainOutput {
        draws,
        log_density,
        acceptance,
    })
}

/// Single-block target defined by a log-density closure on `R^d`.
pub struct DensityTarget<F> {
    log_density: F,
    initial: Vec<f64>,
    initial_sd: Vec<f64>,
}

impl<F> DensityTarget<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    pub fn new(log_density: F, initial: Vec<f64>, initial_sd: Vec<f64>) -> Self {
        assert_eq!(initial.len(), initial_sd.len());
        DensityTarget {
            log_density,
            initial,
            initial_sd,
        }
    }
}

impl<F> BlockedTarget for DensityTarget<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    type State = (Vec<f64>, f64);
    type Pending = (Vec<f64>, f64);

    fn dim(&self) -> usize {
        self.initial.len()
    }

    fn blocks(&self) -> Vec<BlockSpec> {
        vec![BlockSpec::new("all", self.initial_sd.clone(), true)]
    }

    fn initial_point(&self, _chain: usize, attempt: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let spread = 1.0 + attempt as f64;
        self.initial
            .iter()
            .zip(&self.initial_sd)
            .map(|(x, sd)| x + spread * sd * (rng.random::<f64>() - 0.5))
            .collect()
    }

    fn init_state(&self, x: Vec<f64>) -> std::result::Result<Self::State, String> {
        let lp = (self.log_density)(&x);
        if lp.is_finite() {
            Ok((x, lp))
        } else {
            Err(format!("log-density is {lp} at the starting point"))
        }
    }

    fn new_pending(&self) -> Self::Pending {
        (vec![0.0; self.initial.len()], 0.0)
    }

    fn unconstrained<'s>(&self, state: &'s Self::State) -> &'s [f64] {
        &state.0
    }

    fn log_density(&self, state: &Self::State) -> f64 {
        state.1
    }

    fn block_position(&self, state: &Self::State, _block: usize, out: &mut [f64]) {
        out.copy_from_slice(&state.0);
    }

    fn propose(
        &self,
        state: &Self::State,
        _block: usize,
        delta: &[f64],
        pending: &mut Self::Pending,
    ) -> f64 {
        for ((p, x), d) in pending.0.iter_mut().zip(&state.0).zip(delta) {
            *p = x + d;
        }
        pending.1 = (self.log_density)(&pending.0);
        if pending.1 == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        pending.1 - state.1
    }

    fn commit(&self, state: &mut Self::State, _block: usize, pending: &mut Self::Pending) {
        std::mem::swap(&mut state.0, &mut pending.0);
        state.1 = pending.1;
    }
}
