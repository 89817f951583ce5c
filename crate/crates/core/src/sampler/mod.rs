//! Adaptive random-walk Metropolis-within-Gibbs sampler and convergence diagnostics.

mod adapt;
pub mod diagnostics;
pub mod draws;
pub mod engine;
pub mod qmm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ModelSpec};

pub use diagnostics::{
    effective_sample_size, rhat, split_chains, ConvergenceReport, ParameterDiagnostics,
};
pub use draws::{BlockAcceptance, ParameterSummary, PosteriorDraws};
pub use engine::{run_chain, BlockSpec, BlockedTarget, ChainOutput, DensityTarget};
pub use qmm::QmmTarget;

/// Which parameters move jointly. The fixed effects, the error model, `L_v` and each
/// subject's random effects are always separate blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPlan {
    /// Adds a block that shifts `beta` against every subject's random effects, which
    /// keeps the link values fixed and lets the population parameters move freely.
    pub recenter: bool,
}

impl Default for BlockPlan {
    fn default() -> Self {
        BlockPlan { recenter: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_keep: usize,
    pub thin: usize,
    pub seed: u64,
    pub blocks: BlockPlan,
    /// Acceptance target for one-dimensional blocks.
    pub target_accept_scalar: f64,
    /// Acceptance target for multivariate blocks.
    pub target_accept_multi: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_chains: 4,
            n_warmup: 5000,
            n_keep: 5000,
            thin: 1,
            seed: 1,
            blocks: BlockPlan::default(),
            target_accept_scalar: 0.44,
            target_accept_multi: 0.234,
        }
    }
}

impl ChainConfig {
    pub fn with_lengths(n_chains: usize, n_warmup: usize, n_keep: usize, seed: u64) -> Self {
        ChainConfig {
            n_chains,
            n_warmup,
            n_keep,
            seed,
            ..ChainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::config("n_chains must be at least 1"));
        }
        if self.thin == 0 || self.n_keep == 0 {
            return Err(Error::config("n_keep and thin must be positive"));
        }
        for rate in [self.target_accept_scalar, self.target_accept_multi] {
            if !(rate > 0.0 && rate < 1.0) {
                return Err(Error::config(format!(
                    "acceptance target {rate} outside (0, 1)"
                )));
            }
        }
        Ok(())
    }
}

/// Runs `cfg.n_chains` independent chains, concurrently when the `parallel` feature is
/// on, and merges them in chain order.
pub fn run_target<T: BlockedTarget>(target: &T, cfg: &ChainConfig) -> Result<Vec<ChainOutput>> {
    cfg.validate()?;
    crate::parallel::map_indexed(cfg.n_chains, |c| run_chain(target, cfg, c))
        .into_iter()
        .collect()
}

/// Samples the posterior of `spec` on `data`.
pub fn run_chains(data: &Dataset, spec: &ModelSpec, cfg: &ChainConfig) -> Result<PosteriorDraws> {
    let target = QmmTarget::new(data, *spec, cfg.blocks)?;
    let outputs = run_target(&target, cfg)?;
    let block_names: Vec<String> = target.blocks().into_iter().map(|b| b.name).collect();
    PosteriorDraws::from_chains(target.layout(), &block_names, outputs)
}
