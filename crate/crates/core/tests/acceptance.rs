//! One PASS/FAIL line per acceptance criterion.
//!
//! Runs as a plain binary (`harness = false`). The process exits non-zero on a
//! failed criterion only when `SEPQMM_ACCEPTANCE_STRICT=1`; otherwise the lines are a
//! report. Criterion 9 needs `SEPQMM_ACTG315_CSV` pointing at the viral-load data.

mod common;

use std::time::Instant;

use common::{
    integrate, integrate_lower, reg_lower_gamma_oracle, residual_calibration, ConjugateNormal,
    ObservedDraw,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sepqmm::bridge::{bridge_log_ml, estimate_log_ml, fit_proposal, BridgeConfig};
use sepqmm::dist::{ErrorKernel, QuantileLevel, SepParams, SlParams};
use sepqmm::model::{Dataset, KernelKind, LinkFunction, ModelSpec, PriorSpec, QmmPosterior};
use sepqmm::sampler::{
    effective_sample_size, rhat, run_chains, run_target, ChainConfig, DensityTarget,
};
use sepqmm::simstudy::{run_scenario, SimFitConfig, SimScenario};
use sepqmm::special::{inv_reg_lower_inc_gamma, reg_lower_inc_gamma};
use sepqmm::stats::{mean, variance};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

enum Outcome {
    Pass(String),
    Fail(String),
    Skipped(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn level(p: f64) -> QuantileLevel {
    QuantileLevel::new(p).unwrap()
}

fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect()
}

fn special_functions(limit: f64) -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for &a in &geometric(1e-3, 40.0, 20) {
        for &b in &geometric(0.2, 20.0, 20) {
            worst = worst
                .max((reg_lower_inc_gamma(a, b).unwrap() - reg_lower_gamma_oracle(a, b)).abs());
        }
    }
    let mut round = 0.0f64;
    for b in [0.2, 0.5, 1.0, 2.0, 5.0] {
        for k in 1..1000 {
            let q = k as f64 * 0.999 / 1000.0;
            let x = inv_reg_lower_inc_gamma(q, b).unwrap();
            round = round.max((reg_lower_inc_gamma(x, b).unwrap() - q).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-8 && round <= 1e-9 && secs < limit,
        format!("max |G - quadrature| {worst:.1e} (tol 1e-8), max round-trip {round:.1e} (tol 1e-9), {secs:.2} s"),
    )
}

fn sep_correctness(limit: f64) -> Outcome {
    let start = Instant::now();
    let (mut cdf_err, mut norm_err, mut fd_err) = (0.0f64, 0.0f64, 0.0f64);
    for p in [0.1, 0.5, 0.8] {
        for k1 in [0.5, 1.0, 2.0] {
            for k2 in [0.5, 1.0, 2.0] {
                let d = SepParams::new(0.3, 1.2, k1, k2, level(p)).unwrap();
                let pdf = |x: f64| d.ln_pdf(x).exp();
                let left = integrate_lower(pdf, d.mu(), 1e-11);
                let right = common::integrate_upper(pdf, d.mu(), 1e-11);
                norm_err = norm_err.max((left + right - 1.0).abs());
                for k in -8..=8 {
                    let y = d.mu() + 0.75 * k as f64;
                    let quad = if y <= d.mu() {
                        integrate_lower(pdf, y, 1e-11)
                    } else {
                        left + integrate(pdf, d.mu(), y, 1e-11)
                    };
                    cdf_err = cdf_err.max((d.cdf(y) - quad).abs());
                }
                let h = 1e-5;
                for k in -6..=6 {
                    let y = d.mu() + 0.37 * k as f64 + 0.011;
                    let fd = (d.cdf(y + h) - d.cdf(y - h)) / (2.0 * h);
                    fd_err = fd_err.max((fd - pdf(y)).abs());
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        cdf_err <= 1e-6 && norm_err <= 1e-6 && fd_err <= 1e-5 && secs < limit,
        format!(
            "27 grid points: CDF vs quadrature {cdf_err:.1e}, normalization {norm_err:.1e}, finite difference {fd_err:.1e}, {secs:.2} s"
        ),
    )
}

fn reductions() -> Outcome {
    let (mu, sigma) = (1.5, 2.0);
    let d = SepParams::new(mu, sigma, 2.0, 2.0, level(0.5)).unwrap();
    let n = Normal::new(mu, sigma / (2.0 * std::f64::consts::PI).sqrt()).unwrap();
    let mut normal_err = 0.0f64;
    for k in -40..=40 {
        let y = mu + 0.05 * k as f64;
        normal_err = normal_err
            .max((d.ln_pdf(y).exp() - n.pdf(y)).abs())
            .max((d.cdf(y) - n.cdf(y)).abs());
    }
    for k in 1..100 {
        let u = k as f64 / 100.0;
        normal_err = normal_err.max((d.quantile(u).unwrap() - n.inverse_cdf(u)).abs());
    }
    let mut sl_err = 0.0f64;
    for p in [0.1, 0.25, 0.5, 0.9] {
        let d = SepParams::new(-0.4, 1.3, 1.0, 1.0, level(p)).unwrap();
        let sl = SlParams::new(-0.4, 2.0 * p * (1.0 - p) * 1.3, level(p)).unwrap();
        for k in -50..=50 {
            let y = -0.4 + 0.1 * k as f64;
            sl_err = sl_err
                .max((d.ln_pdf(y) - sl.ln_pdf(y)).abs())
                .max((d.cdf(y) - sl.cdf(y)).abs());
        }
    }
    check(
        normal_err <= 1e-9 && sl_err <= 1e-10,
        format!("normal {normal_err:.1e} (tol 1e-9), skew Laplace {sl_err:.1e} (tol 1e-10)"),
    )
}

fn censoring_coherence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let mu = rng.random_range(-5.0..5.0);
        let sigma = rng.random_range(0.05..5.0);
        let p = rng.random_range(0.02..0.98);
        let k: ErrorKernel = if case % 2 == 0 {
            ErrorKernel::Sep(
                SepParams::new(
                    mu,
                    sigma,
                    rng.random_range(0.3..3.0),
                    rng.random_range(0.3..3.0),
                    level(p),
                )
                .unwrap(),
            )
        } else {
            ErrorKernel::Sl(SlParams::new(mu, sigma, level(p)).unwrap())
        };
        let a = mu + rng.random_range(-10.0..10.0);
        let b = a + rng.random_range(1e-3..5.0);
        let c = b + rng.random_range(1e-3..5.0);
        let additivity =
            k.ln_interval(a, c).exp() - k.ln_interval(a, b).exp() - k.ln_interval(b, c).exp();
        let (lf, ls) = k.ln_cdf_pair(b);
        let complement = lf.exp() + ls.exp() - 1.0;
        let split = k.ln_cdf(a).exp() + k.ln_interval(a, c).exp() + k.ln_sf(c).exp() - 1.0;
        worst = worst
            .max(additivity.abs())
            .max(complement.abs())
            .max(split.abs());
    }
    check(
        worst <= 1e-12,
        format!("1000 random cases, max identity error {worst:.1e} (tol 1e-12)"),
    )
}

fn sampler_calibration(limit: f64) -> Outcome {
    let start = Instant::now();
    let model = ConjugateNormal::example(20, 1.3);
    let (m, s) = model.posterior();
    let target = DensityTarget::new(|x: &[f64]| model.log_joint(x[0]), vec![0.0], vec![1.0]);
    let out = run_target(&target, &ChainConfig::with_lengths(4, 2000, 5000, 42)).unwrap();
    let chains: Vec<Vec<f64>> = out
        .into_iter()
        .map(|o| o.draws.into_iter().map(|d| d[0]).collect())
        .collect();
    let all = chains.concat();
    let ess = effective_sample_size(&chains).unwrap();
    let z_mean = (mean(&all) - m) / (s / ess.sqrt());
    let z_sd = (variance(&all).sqrt() - s) / (s / (2.0 * ess).sqrt());
    let r = rhat(&chains).unwrap();
    let secs = start.elapsed().as_secs_f64();
    check(
        z_mean.abs() <= 3.0 && z_sd.abs() <= 3.0 && r < 1.01 && secs < limit,
        format!("mean off by {z_mean:+.2} MCSE, sd off by {z_sd:+.2} MCSE, R-hat {r:.4}, ESS {ess:.0}, {secs:.2} s"),
    )
}

fn bridge_oracle(limit: f64) -> Outcome {
    let start = Instant::now();
    let models = [
        ConjugateNormal::example(12, 1.0),
        ConjugateNormal::example(5, -2.0),
        ConjugateNormal::example(30, 0.4),
    ];
    let log_joint = |x: &[f64]| {
        models
            .iter()
            .zip(x)
            .map(|(m, t)| m.log_joint(*t))
            .sum::<f64>()
    };
    let truth: f64 = models.iter().map(ConjugateNormal::log_evidence).sum();
    let target = DensityTarget::new(log_joint, vec![0.0; 3], vec![0.5; 3]);
    let out = run_target(&target, &ChainConfig::with_lengths(4, 1000, 2000, 9)).unwrap();
    let (mut fit, mut iterate) = (Vec::new(), Vec::new());
    for o in out {
        let half = o.draws.len() / 2;
        fit.extend_from_slice(&o.draws[..half]);
        iterate.extend_from_slice(&o.draws[half..]);
    }
    let proposal = fit_proposal(&fit).unwrap();
    let cfg = BridgeConfig {
        seed: 3,
        ..BridgeConfig::default()
    };
    let a = bridge_log_ml(&iterate, &proposal, log_joint, &cfg).unwrap();
    let b = bridge_log_ml(&iterate, &proposal, |x| log_joint(x) + 5.0, &cfg).unwrap();
    let err = a.log_ml - truth;
    let shift = b.log_ml - a.log_ml;
    let secs = start.elapsed().as_secs_f64();
    check(
        err.abs() <= 0.05 && (shift - 5.0).abs() <= 0.01 && a.converged && secs < limit,
        format!("estimate {:.4} vs analytic {truth:.4} (error {err:+.4}), shift {shift:.4}, {secs:.2} s", a.log_ml),
    )
}

fn residual_self_consistency(limit: f64) -> Outcome {
    let start = Instant::now();
    let p = residual_calibration(100, 17, ObservedDraw::Dataset);
    let pass = p.iter().filter(|&&x| x > 0.01).count();
    let q = residual_calibration(100, 17, ObservedDraw::PerObservation);
    let pass_indep = q.iter().filter(|&&x| x > 0.01).count();
    let secs = start.elapsed().as_secs_f64();
    check(
        pass >= 95 && secs < limit,
        format!(
            "whole simulated datasets: {pass}/100 with p > 0.01 (need 95); independent predictive draws: {pass_indep}/100; {secs:.1} s"
        ),
    )
}

fn desk_table2(limit: f64) -> Outcome {
    let start = Instant::now();
    let cfg = SimFitConfig::default();
    let kernels = [KernelKind::Sl, KernelKind::Sep];
    let mut ok = true;
    let mut parts = Vec::new();
    for kappa in [(2.0, 0.5), (0.5, 2.0), (1.0, 1.0)] {
        let s = SimScenario {
            n_reps: 50,
            ..SimScenario::new(0.05, 0.5, kappa)
        };
        let r = run_scenario(&s, &kernels, &cfg).unwrap();
        let sl = r.row(KernelKind::Sl, "beta[1]").unwrap();
        let sep = r.row(KernelKind::Sep, "beta[1]").unwrap();
        let pass = match kappa {
            (2.0, 0.5) => {
                sep.bias.abs() <= 0.06
                    && sep.coverage >= 0.90
                    && sl.bias >= 0.08
                    && sl.coverage <= 0.90
            }
            (0.5, 2.0) => {
                sep.bias.abs() <= 0.06
                    && sep.coverage >= 0.90
                    && sl.bias <= -0.08
                    && sl.coverage <= 0.90
            }
            _ => {
                sep.bias.abs() <= 0.05
                    && sep.coverage >= 0.90
                    && sl.bias.abs() <= 0.05
                    && sl.coverage >= 0.90
            }
        };
        ok &= pass;
        parts.push(format!(
            "kappa=({},{}) {}: SEP bias {:+.4} CP {:.2} n={}, SKL bias {:+.4} CP {:.2} n={}",
            kappa.0,
            kappa.1,
            if pass { "ok" } else { "MISS" },
            sep.bias,
            sep.coverage,
            sep.n_used,
            sl.bias,
            sl.coverage,
            sl.n_used
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        ok && secs < limit,
        format!("{}; {secs:.0} s", parts.join("; ")),
    )
}

fn actg_ordering() -> Outcome {
    let Ok(path) = std::env::var("SEPQMM_ACTG315_CSV") else {
        return Outcome::Skipped(
            "set SEPQMM_ACTG315_CSV to a dataset CSV with CD4 as the first covariate".into(),
        );
    };
    let data = match Dataset::from_csv_path(&path) {
        Ok(d) => d,
        Err(e) => return Outcome::Fail(format!("could not read {path}: {e}")),
    };
    let chains = ChainConfig::with_lengths(4, 5000, 5000, 315);
    let mut ok = true;
    let mut parts = Vec::new();
    for p0 in [0.5, 0.75, 0.9] {
        let mut log_ml = Vec::new();
        for kernel in [KernelKind::Sl, KernelKind::Sep] {
            let spec = ModelSpec::new(
                LinkFunction::BiexponentialCd4 { cd4_column: 0 },
                kernel,
                level(p0),
                PriorSpec::default(),
            )
            .unwrap();
            let estimate = run_chains(&data, &spec, &chains).and_then(|draws| {
                let post = QmmPosterior::new(&data, spec)?;
                estimate_log_ml(&draws, &post, &BridgeConfig::default())
            });
            match estimate {
                Ok(r) => log_ml.push(r.log_ml),
                Err(e) => return Outcome::Fail(format!("p0={p0} {}: {e}", kernel.label())),
            }
        }
        let pass = log_ml[1] >= log_ml[0];
        ok &= pass;
        parts.push(format!(
            "p0={p0}: SEP {:.2} vs SKL {:.2}",
            log_ml[1], log_ml[0]
        ));
    }
    check(ok, parts.join("; "))
}

fn main() {
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("special functions", Box::new(|| special_functions(10.0))),
        ("SEP correctness", Box::new(|| sep_correctness(30.0))),
        ("reductions", Box::new(reductions)),
        ("censoring coherence", Box::new(censoring_coherence)),
        (
            "sampler calibration",
            Box::new(|| sampler_calibration(60.0)),
        ),
        ("bridge sampling", Box::new(|| bridge_oracle(60.0))),
        (
            "residual calibration",
            Box::new(|| residual_self_consistency(300.0)),
        ),
        (
            "desk-scale simulation table",
            Box::new(|| desk_table2(7200.0)),
        ),
        ("real-data ordering", Box::new(actg_ordering)),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let line = match run() {
            Outcome::Pass(d) => format!("PASS     {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                format!("FAIL     {d}")
            }
            Outcome::Skipped(d) => format!("SKIPPED  {d}"),
        };
        println!("criterion {} [{name}]: {line}", k + 1);
    }
    println!(
        "acceptance: {} of {} criteria failed",
        failed,
        criteria.len()
    );
    let strict = std::env::var("SEPQMM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
