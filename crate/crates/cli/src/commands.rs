use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use sepqmm::bridge::{estimate_log_ml, BridgeConfig, BridgeResult};
use sepqmm::model::{Dataset, KernelKind, ModelSpec, QmmPosterior};
use sepqmm::parallel::map_indexed;
use sepqmm::residuals::residual_report;
use sepqmm::sampler::{run_chains, ConvergenceReport, ParameterSummary, PosteriorDraws};
use sepqmm::simstudy::{apply_censoring, generate_dataset, run_scenario, write_table2, SimGrid};
use sepqmm::trajectory::{population_curve, Cd4Reference};
use serde::Serialize;

use crate::config::RunConfig;

/// Replicates per scenario under `--full-scale`.
const FULL_SCALE_REPS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    NotConverged,
}

impl Status {
    fn merge(self, other: Status) -> Status {
        if self == Status::NotConverged || other == Status::NotConverged {
            Status::NotConverged
        } else {
            Status::Ok
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    kernel: KernelKind,
    p0: f64,
}

impl Cell {
    fn dir(&self, out: &Path) -> PathBuf {
        out.join(format!("{}_p{:.2}", self.kernel.label(), self.p0))
    }
}

fn cells(cfg: &RunConfig) -> Vec<Cell> {
    cfg.quantiles
        .iter()
        .flat_map(|&p0| cfg.kernels.iter().map(move |&kernel| Cell { kernel, p0 }))
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(create(path)?, value)?;
    Ok(())
}

pub fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| anyhow!("--data is required for this command"))?;
    let mut data = Dataset::from_csv_path(path)
        .map_err(|e| anyhow!(e).context(format!("reading {}", path.display())))?;
    cfg.link_function().check_covariates(data.n_covariates())?;
    data.transform_time(cfg.time.shift, cfg.time.scale)?;
    if matches!(cfg.link, crate::config::LinkChoice::Biexponential) {
        data.transform_covariate(cfg.cd4_column, cfg.cd4.shift, cfg.cd4.scale)?;
    }
    Ok(data)
}

#[derive(Serialize)]
struct FitSummary<'a> {
    kernel: &'static str,
    p0: f64,
    n_chains: usize,
    n_draws: usize,
    parameters: Vec<ParameterSummary>,
    max_rhat: Option<f64>,
    converged: bool,
    config: &'a RunConfig,
}

struct Fitted {
    draws: PosteriorDraws,
    spec: ModelSpec,
    converged: bool,
}

fn fit_cell(cfg: &RunConfig, data: &Dataset, cell: Cell) -> Result<Fitted> {
    let spec = cfg.spec(cell.kernel, cell.p0)?;
    let draws = run_chains(data, &spec, &cfg.chain_config())?;
    let report = ConvergenceReport::from_draws(&draws, cfg.rhat_threshold);
    let population = spec.layout(0).names();
    let dir = cell.dir(&cfg.out);
    draws.write_csv(create(&dir.join("draws.csv"))?)?;
    let population_rhat = population
        .iter()
        .filter_map(|n| report.get(n).and_then(|p| p.rhat))
        .reduce(f64::max);
    let converged = population_rhat.is_none_or(|r| r <= cfg.rhat_threshold);
    let summary = FitSummary {
        kernel: cell.kernel.label(),
        p0: cell.p0,
        n_chains: draws.n_chains(),
        n_draws: draws.n_draws(),
        parameters: population.iter().filter_map(|n| draws.summary(n)).collect(),
        max_rhat: population_rhat,
        converged,
        config: cfg,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    write_json(&dir.join("convergence.json"), &report)?;
    if !converged {
        eprintln!(
            "warning: {} at p0 = {} did not converge (max R-hat {:.3} > {})",
            cell.kernel.label(),
            cell.p0,
            population_rhat.unwrap_or(f64::NAN),
            cfg.rhat_threshold
        );
    }
    Ok(Fitted {
        draws,
        spec,
        converged,
    })
}

/// Reuses draws written by an earlier `fit` into the same output directory, fitting
/// afresh when none exist.
fn fitted_cell(cfg: &RunConfig, data: &Dataset, cell: Cell) -> Result<Fitted> {
    let path = cell.dir(&cfg.out).join("draws.csv");
    if path.exists() {
        let spec = cfg.spec(cell.kernel, cell.p0)?;
        let mut draws = PosteriorDraws::read_csv(File::open(&path)?)?;
        draws
            .attach_layout(&spec.layout(data.n_subjects()))
            .map_err(|e| {
                anyhow!(e).context(format!(
                    "{} does not match the configured model and data",
                    path.display()
                ))
            })?;
        let report = ConvergenceReport::from_draws(&draws, cfg.rhat_threshold);
        let converged = spec.layout(0).names().iter().all(|n| {
            report
                .get(n)
                .and_then(|p| p.rhat)
                .is_none_or(|r| r <= cfg.rhat_threshold)
        });
        return Ok(Fitted {
            draws,
            spec,
            converged,
        });
    }
    fit_cell(cfg, data, cell)
}

fn for_each_cell<T: Send>(
    cfg: &RunConfig,
    f: impl Fn(Cell) -> Result<T> + Sync + Send,
) -> Result<Vec<(Cell, T)>> {
    let cells = cells(cfg);
    map_indexed(cells.len(), |k| f(cells[k]).map(|t| (cells[k], t)))
        .into_iter()
        .collect()
}

pub fn fit(cfg: &RunConfig) -> Result<Status> {
    let data = load_data(cfg)?;
    let fits = for_each_cell(cfg, |cell| fit_cell(cfg, &data, cell))?;
    // forest-plot data for every cell in one tidy table
    let mut w = csv::Writer::from_writer(create(&cfg.out.join("forest.csv"))?);
    w.write_record(["kernel", "p0", "parameter", "median", "q025", "q975"])?;
    let mut status = Status::Ok;
    for (cell, fitted) in &fits {
        for name in fitted.spec.layout(0).names() {
            if let Some(p) = fitted.draws.summary(&name) {
                w.write_record([
                    cell.kernel.label().to_string(),
                    cell.p0.to_string(),
                    name,
                    p.median.to_string(),
                    p.q025.to_string(),
                    p.q975.to_string(),
                ])?;
            }
        }
        if !fitted.converged {
            status = Status::NotConverged;
        }
        println!("{}", cell.dir(&cfg.out).display());
    }
    w.flush()?;
    Ok(status)
}

#[derive(Serialize)]
struct CompareRow {
    p0: f64,
    sl: Option<BridgeResult>,
    sep: Option<BridgeResult>,
    /// SEP minus SL log marginal likelihood.
    gap: Option<f64>,
}

pub fn compare(cfg: &RunConfig) -> Result<Status> {
    let data = load_data(cfg)?;
    let bridge = BridgeConfig {
        tol: cfg.bridge_tol,
        max_iter: cfg.bridge_max_iter,
        n_proposal: None,
        seed: cfg.seed,
    };
    let results = for_each_cell(cfg, |cell| {
        let fitted = fitted_cell(cfg, &data, cell)?;
        let posterior = QmmPosterior::new(&data, fitted.spec)?;
        let r = estimate_log_ml(&fitted.draws, &posterior, &bridge)?;
        Ok((r, fitted.converged))
    })?;
    let mut status = Status::Ok;
    let mut rows = Vec::new();
    for &p0 in &cfg.quantiles {
        let get = |k: KernelKind| {
            results
                .iter()
                .find(|(c, _)| c.p0 == p0 && c.kernel == k)
                .map(|(_, r)| r.clone())
        };
        let (sl, sep) = (get(KernelKind::Sl), get(KernelKind::Sep));
        for (r, converged) in sl.iter().chain(sep.iter()) {
            if !r.converged || !converged {
                status = Status::NotConverged;
                eprintln!(
                    "warning: p0 = {p0}: bridge converged = {}, chains converged = {converged}",
                    r.converged
                );
            }
        }
        let (sl, sep) = (sl.map(|x| x.0), sep.map(|x| x.0));
        let gap = match (&sl, &sep) {
            (Some(a), Some(b)) => Some(b.log_ml - a.log_ml),
            _ => None,
        };
        rows.push(CompareRow { p0, sl, sep, gap });
    }
    let mut w = csv::Writer::from_writer(create(&cfg.out.join("compare.csv"))?);
    w.write_record([
        "p0",
        "sl_log_ml",
        "sep_log_ml",
        "gap",
        "sl_bridge_converged",
        "sep_bridge_converged",
    ])?;
    let fmt = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_default();
    for r in &rows {
        w.write_record([
            format!("{}", r.p0),
            fmt(r.sl.as_ref().map(|b| b.log_ml)),
            fmt(r.sep.as_ref().map(|b| b.log_ml)),
            fmt(r.gap),
            r.sl.as_ref()
                .map(|b| b.converged.to_string())
                .unwrap_or_default(),
            r.sep
                .as_ref()
                .map(|b| b.converged.to_string())
                .unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    write_json(&cfg.out.join("compare.json"), &rows)?;
    for r in &rows {
        println!(
            "p0={:<5} SL {:>12} SEP {:>12} gap {:>9}",
            r.p0,
            fmt(r.sl.as_ref().map(|b| b.log_ml)),
            fmt(r.sep.as_ref().map(|b| b.log_ml)),
            fmt(r.gap)
        );
    }
    Ok(status)
}

pub fn residuals(cfg: &RunConfig) -> Result<Status> {
    let data = load_data(cfg)?;
    let out = for_each_cell(cfg, |cell| {
        let fitted = fitted_cell(cfg, &data, cell)?;
        let report = residual_report(&fitted.draws, &data, &fitted.spec, cfg.n_sims, cfg.seed)?;
        let dir = cell.dir(&cfg.out);
        let mut w = csv::Writer::from_writer(create(&dir.join("qq.csv"))?);
        w.write_record(["expected", "observed"])?;
        for (e, o) in &report.test.qq {
            w.write_record([e.to_string(), o.to_string()])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_writer(create(&dir.join("residuals.csv"))?);
        w.write_record(["row", "subject_id", "time", "residual"])?;
        for (&k, r) in report.rows.iter().zip(&report.residuals) {
            let obs = &data.observations()[k];
            let id = data
                .subject_ids()
                .get(obs.subject)
                .cloned()
                .unwrap_or_else(|| obs.subject.to_string());
            w.write_record([k.to_string(), id, obs.time.to_string(), r.to_string()])?;
        }
        w.flush()?;
        #[derive(Serialize)]
        struct Ks {
            n: usize,
            n_sims: usize,
            ks_statistic: f64,
            p_value: f64,
        }
        let t = &report.test;
        write_json(
            &dir.join("ks.json"),
            &Ks {
                n: t.n,
                n_sims: report.n_sims,
                ks_statistic: t.ks_statistic,
                p_value: t.p_value,
            },
        )?;
        Ok((t.ks_statistic, t.p_value, fitted.converged))
    })?;
    let mut status = Status::Ok;
    for (cell, (d, p, converged)) in out {
        println!(
            "{} p0={}: KS D = {d:.4}, p = {p:.4}",
            cell.kernel.label(),
            cell.p0
        );
        if !converged {
            status = Status::NotConverged;
        }
    }
    Ok(status)
}

pub fn trajectory(cfg: &RunConfig) -> Result<Status> {
    let data = load_data(cfg)?;
    let model_times: Vec<f64> = cfg.traj_times.iter().map(|&t| cfg.time.apply(t)).collect();
    // the reference path is linear in raw time; re-express it on the model's scales
    let cd4 = Cd4Reference {
        baseline: (cfg.cd4_baseline + cfg.cd4_slope * cfg.time.shift - cfg.cd4.shift)
            / cfg.cd4.scale,
        slope: cfg.cd4_slope * cfg.time.scale / cfg.cd4.scale,
    };
    let out = for_each_cell(cfg, |cell| {
        let fitted = fitted_cell(cfg, &data, cell)?;
        let curve = population_curve(&fitted.draws, &fitted.spec, &model_times, cd4)?;
        let mut w = csv::Writer::from_writer(create(&cell.dir(&cfg.out).join("trajectory.csv"))?);
        w.write_record(["time", "median", "lower", "upper"])?;
        for (raw, p) in cfg.traj_times.iter().zip(&curve) {
            w.write_record([
                raw.to_string(),
                p.median.to_string(),
                p.lower.to_string(),
                p.upper.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(fitted.converged)
    })?;
    Ok(out.iter().fold(Status::Ok, |s, (_, ok)| {
        s.merge(if *ok {
            Status::Ok
        } else {
            Status::NotConverged
        })
    }))
}

fn load_grid(config: Option<&Path>, seed: Option<u64>, full_scale: bool) -> Result<SimGrid> {
    let mut grid = match config {
        Some(path) => SimGrid::parse(
            &fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        )?,
        None => SimGrid::default(),
    };
    if full_scale {
        grid.set_reps(FULL_SCALE_REPS);
    }
    if let Some(seed) = seed {
        grid.scenarios.iter_mut().for_each(|s| s.seed = seed);
    }
    Ok(grid)
}

pub fn simstudy(
    config: Option<&Path>,
    kernels: &[KernelKind],
    seed: Option<u64>,
    full_scale: bool,
    out: &Path,
) -> Result<Status> {
    let grid = load_grid(config, seed, full_scale)?;
    eprint!("{}", grid.describe());
    let mut results = Vec::new();
    for s in &grid.scenarios {
        let r = run_scenario(s, kernels, &grid.fit)?;
        eprintln!(
            "done: {} (mean censored share {:.3})",
            s.label(),
            r.mean_censored_share
        );
        results.push(r);
    }
    write_table2(&results, create(&out.join("table2.csv"))?)?;
    write_json(&out.join("simstudy.json"), &results)?;
    println!("{}", out.join("table2.csv").display());
    Ok(Status::Ok)
}

pub fn simulate(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<Status> {
    let grid = load_grid(config, seed, false)?;
    for (k, s) in grid.scenarios.iter().enumerate() {
        let data = apply_censoring(&generate_dataset(s, s.rep_seed(0))?, s.censor_frac)?;
        let path = out.join(format!("sim_{:02}.csv", k + 1));
        data.write_csv(create(&path)?)?;
        println!("{}  {}", path.display(), s.label());
    }
    Ok(Status::Ok)
}
