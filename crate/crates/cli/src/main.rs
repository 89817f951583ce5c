//! `sepqmm`: fit, compare and check quantile mixed-effects models from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use commands::Status;
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "sepqmm",
    version,
    about = "Bayesian quantile mixed-effects models for censored longitudinal data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(clap::Args)]
struct Flags {
    /// Input CSV (subject_id,time,response,censor,bound2,covariates...)
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// key = value config file; flags given here override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated quantile levels
    #[arg(long, global = true)]
    quantiles: Option<String>,
    #[arg(long, value_enum, global = true)]
    kernel: Option<KernelArg>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Run `simstudy` with 300 replicates per scenario
    #[arg(long, global = true)]
    full_scale: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Sl,
    Sep,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the posterior for every (kernel, quantile) pair
    Fit,
    /// Bridge-sampled log marginal likelihoods and SEP minus SL gaps
    Compare,
    /// Posterior-predictive scaled residuals and KS uniformity tests
    Residuals,
    /// Population quantile curves with random effects at zero
    Trajectory,
    /// Frequentist performance over a simulation grid
    Simstudy,
    /// Write simulated datasets from the data-generating process
    Simulate,
}

fn run_config(flags: &Flags) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &flags.config {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_file(&text)?;
    }
    if let Some(d) = &flags.data {
        cfg.data = Some(d.clone());
    }
    if let Some(q) = &flags.quantiles {
        cfg.quantiles = config::parse_quantiles(q)?;
    }
    if let Some(k) = flags.kernel {
        cfg.kernels = kernels(k);
    }
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(o) = &flags.out {
        cfg.out = o.clone();
    }
    if let Some(w) = flags.workers {
        cfg.workers = Some(w);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn kernels(k: KernelArg) -> Vec<sepqmm::model::KernelKind> {
    use sepqmm::model::KernelKind;
    match k {
        KernelArg::Sl => vec![KernelKind::Sl],
        KernelArg::Sep => vec![KernelKind::Sep],
        KernelArg::Both => vec![KernelKind::Sl, KernelKind::Sep],
    }
}

#[cfg(feature = "parallel")]
fn set_workers(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn set_workers(_: Option<usize>) -> Result<()> {
    Ok(())
}

fn run(cli: &Cli) -> Result<Status> {
    let f = &cli.flags;
    match cli.command {
        Command::Simstudy | Command::Simulate => {
            set_workers(f.workers)?;
            let out = f.out.clone().unwrap_or_else(|| PathBuf::from("sepqmm-out"));
            if matches!(cli.command, Command::Simulate) {
                commands::simulate(f.config.as_deref(), f.seed, &out)
            } else {
                let ks = kernels(f.kernel.unwrap_or(KernelArg::Both));
                commands::simstudy(f.config.as_deref(), &ks, f.seed, f.full_scale, &out)
            }
        }
        _ => {
            let cfg = run_config(f)?;
            set_workers(cfg.workers)?;
            match cli.command {
                Command::Fit => commands::fit(&cfg),
                Command::Compare => commands::compare(&cfg),
                Command::Residuals => commands::residuals(&cfg),
                Command::Trajectory => commands::trajectory(&cfg),
                _ => unreachable!(),
            }
        }
    }
}

/// 4 for numeric failures; every other error is bad input (2).
fn exit_code(err: &anyhow::Error) -> u8 {
    use sepqmm::Error;
    let numeric = err
        .chain()
        .filter_map(|c| c.downcast_ref::<Error>())
        .any(|e| matches!(e, Error::Numeric(_) | Error::Initialization(_)));
    if numeric {
        4
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
