//! Run configuration: built-in defaults, then a flat `key = value` file, then
//! command-line flags, each layer overriding the one before.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use sepqmm::dist::QuantileLevel;
use sepqmm::model::{HalfT, KappaPrior, KernelKind, LinkFunction, ModelSpec, PriorSpec};
use sepqmm::sampler::ChainConfig;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transform {
    pub shift: f64,
    pub scale: f64,
}

impl Default for Transform {
    fn default() -> Self {
        Transform {
            shift: 0.0,
            scale: 1.0,
        }
    }
}

impl Transform {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.shift) / self.scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LinkChoice {
    Linear,
    Biexponential,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub quantiles: Vec<f64>,
    pub kernels: Vec<KernelKind>,
    pub seed: u64,
    pub workers: Option<usize>,
    pub link: LinkChoice,
    /// Covariate column holding CD4, counted from zero among the covariates.
    pub cd4_column: usize,
    pub time: Transform,
    pub cd4: Transform,
    #[serde(skip)]
    pub chains: ChainConfig,
    pub rhat_threshold: f64,
    #[serde(skip)]
    pub priors: PriorSpec,
    pub n_sims: usize,
    pub bridge_tol: f64,
    pub bridge_max_iter: usize,
    /// Trajectory grid on the original time scale.
    pub traj_times: Vec<f64>,
    /// CD4 reference path `baseline + slope * t` on the original scales.
    pub cd4_baseline: f64,
    pub cd4_slope: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            out: PathBuf::from("sepqmm-out"),
            quantiles: vec![0.10, 0.25, 0.50, 0.75, 0.90],
            kernels: vec![KernelKind::Sl, KernelKind::Sep],
            seed: 1,
            workers: None,
            link: LinkChoice::Linear,
            cd4_column: 0,
            time: Transform::default(),
            cd4: Transform::default(),
            chains: ChainConfig::default(),
            rhat_threshold: 1.1,
            priors: PriorSpec::default(),
            n_sims: sepqmm::residuals::DEFAULT_N_SIMS,
            bridge_tol: 1e-10,
            bridge_max_iter: 1000,
            traj_times: (0..=40).map(|k| k as f64 * 5.0).collect(),
            cd4_baseline: 2.25,
            cd4_slope: 0.001,
        }
    }
}

pub fn parse_quantiles(value: &str) -> Result<Vec<f64>> {
    let mut qs = parse_list(value)?;
    for &q in &qs {
        QuantileLevel::new(q).map_err(|e| anyhow!(e))?;
    }
    qs.sort_by(f64::total_cmp);
    qs.dedup();
    Ok(qs)
}

pub fn parse_kernels(value: &str) -> Result<Vec<KernelKind>> {
    match value.trim().to_ascii_lowercase().as_str() {
        "both" => Ok(vec![KernelKind::Sl, KernelKind::Sep]),
        other => Ok(vec![other.parse().map_err(|e| anyhow!("{e}"))?]),
    }
}

fn parse_list(value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .with_context(|| format!("not a number: `{}`", x.trim()))
        })
        .collect()
}

// `start:stop:step` or a comma list
fn parse_grid(value: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = value.split(':').collect();
    if parts.len() == 3 {
        let [start, stop, step] = [parts[0], parts[1], parts[2]].map(|s| s.trim().parse::<f64>());
        let (start, stop, step) = (start?, stop?, step?);
        if !(step > 0.0 && stop >= start) {
            bail!("time grid needs step > 0 and stop >= start");
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|k| start + k as f64 * step).collect());
    }
    parse_list(value)
}

fn parse_pair(value: &str) -> Result<(f64, f64)> {
    let (a, b) = value
        .split_once(':')
        .ok_or_else(|| anyhow!("expected a:b, got `{value}`"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

fn parse_half_t(value: &str) -> Result<HalfT> {
    let (nu, scale) = parse_pair(value)?;
    HalfT::new(nu, scale).map_err(|e| anyhow!(e))
}

fn parse_bool(value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => bail!("expected true or false, got `{other}`"),
    }
}

impl RunConfig {
    /// Applies every `key = value` line of `text`. Blank lines and `#` comments are
    /// skipped; unknown keys are errors.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected key = value", n + 1))?;
            self.set(key.trim(), value.trim())
                .with_context(|| format!("config line {}", n + 1))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || {
            value
                .parse::<f64>()
                .with_context(|| format!("`{key}` needs a number, got `{value}`"))
        };
        let int = || {
            value
                .parse::<usize>()
                .with_context(|| format!("`{key}` needs an integer, got `{value}`"))
        };
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "quantiles" => self.quantiles = parse_quantiles(value)?,
            "kernel" => self.kernels = parse_kernels(value)?,
            "seed" => {
                self.seed = value
                    .parse()
                    .with_context(|| format!("bad seed `{value}`"))?
            }
            "workers" => self.workers = Some(int()?),
            "link" => {
                self.link = match value {
                    "linear" => LinkChoice::Linear,
                    "biexponential" | "biexp" => LinkChoice::Biexponential,
                    other => bail!("link must be linear or biexponential, got `{other}`"),
                }
            }
            "cd4_column" => self.cd4_column = int()?,
            "time_shift" => self.time.shift = num()?,
            "time_scale" => self.time.scale = num()?,
            "cd4_shift" => self.cd4.shift = num()?,
            "cd4_scale" => self.cd4.scale = num()?,
            "chains" => self.chains.n_chains = int()?,
            "warmup" => self.chains.n_warmup = int()?,
            "keep" => self.chains.n_keep = int()?,
            "thin" => self.chains.thin = int()?,
            "recenter" => self.chains.blocks.recenter = parse_bool(value)?,
            "rhat_threshold" => self.rhat_threshold = num()?,
            "beta_variance" => self.priors.beta_variance = num()?,
            "offdiag_variance" => self.priors.offdiag_variance = num()?,
            "scale_prior" => self.priors.scale_prior = parse_half_t(value)?,
            "l_diag_prior" => self.priors.l_diag_prior = parse_half_t(value)?,
            "kappa_prior" => {
                self.priors.kappa_prior = match value.split_once(':') {
                    Some(("halft", rest)) => KappaPrior::HalfT(parse_half_t(rest)?),
                    Some(("uniform", rest)) => {
                        let (lo, hi) = parse_pair(rest)?;
                        KappaPrior::uniform(lo, hi).map_err(|e| anyhow!(e))?
                    }
                    _ => bail!("kappa_prior must be halft:nu:scale or uniform:lower:upper"),
                }
            }
            "n_sims" => self.n_sims = int()?,
            "bridge_tol" => self.bridge_tol = num()?,
            "bridge_max_iter" => self.bridge_max_iter = int()?,
            "traj_times" => self.traj_times = parse_grid(value)?,
            "cd4_baseline" => self.cd4_baseline = num()?,
            "cd4_slope" => self.cd4_slope = num()?,
            other => bail!("unknown key `{other}`"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.quantiles.is_empty() {
            bail!("at least one quantile is required");
        }
        self.chains.validate()?;
        self.priors.validate()?;
        if !(self.rhat_threshold > 1.0) {
            bail!("rhat_threshold must exceed 1");
        }
        if self.time.scale == 0.0 || self.cd4.scale == 0.0 {
            bail!("transform scales must be non-zero");
        }
        Ok(())
    }

    pub fn link_function(&self) -> LinkFunction {
        match self.link {
            LinkChoice::Linear => LinkFunction::LinearRandomInterceptSlope,
            LinkChoice::Biexponential => LinkFunction::BiexponentialCd4 {
                cd4_column: self.cd4_column,
            },
        }
    }

    pub fn spec(&self, kernel: KernelKind, p0: f64) -> Result<ModelSpec> {
        Ok(ModelSpec::new(
            self.link_function(),
            kernel,
            QuantileLevel::new(p0)?,
            self.priors,
        )?)
    }

    pub fn chain_config(&self) -> ChainConfig {
        ChainConfig {
            seed: self.seed,
            ..self.chains
        }
    }
}
