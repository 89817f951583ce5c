//! Population quantile curves: the link evaluated with every random effect at zero,
//! one curve per posterior draw, summarized pointwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::sampler::PosteriorDraws;
use crate::stats::quantile_sorted;

/// A CD4 path `baseline + slope * t` on the model's covariate scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cd4Reference {
    pub baseline: f64,
    pub slope: f64,
}

impl Cd4Reference {
    pub fn at(&self, t: f64) -> f64 {
        self.baseline + self.slope * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub time: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Pointwise median and central 95% band of the population curve over `times`.
/// The CD4 reference is ignored by links without a CD4 term.
pub fn population_curve(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    times: &[f64],
    cd4: Cd4Reference,
) -> Result<Vec<TrajectoryPoint>> {
    if draws.n_draws() == 0 {
        return Err(Error::config("no posterior draws"));
    }
    let layout = spec.layout(0);
    let cols: Vec<usize> = layout
        .names()
        .iter()
        .map(|n| {
            draws
                .column_index(n)
                .ok_or_else(|| Error::config(format!("draws have no column `{n}`")))
        })
        .collect::<Result<_>>()?;
    let n_beta = spec.link.n_beta();
    let q = spec.link.re_dim();
    let zeros = vec![0.0; q];
    let n_cov = spec.link.required_covariates();
    let mut covariates = vec![0.0; n_cov];
    let mut beta = vec![0.0; n_beta];
    let mut curves: Vec<Vec<f64>> = vec![Vec::with_capacity(draws.n_draws()); times.len()];
    for row in draws.rows() {
        for k in 0..n_beta {
            beta[k] = row[cols[k]];
        }
        let gamma = if spec.link.has_gamma() {
            row[cols[n_beta]]
        } else {
            0.0
        };
        for (curve, &t) in curves.iter_mut().zip(times) {
            if n_cov > 0 {
                covariates[n_cov - 1] = cd4.at(t);
            }
            curve.push(spec.link.evaluate(t, &covariates, &beta, gamma, &zeros));
        }
    }
    Ok(curves
        .into_iter()
        .zip(times)
        .map(|(mut values, &time)| {
            values.sort_by(f64::total_cmp);
            TrajectoryPoint {
                time,
                median: quantile_sorted(&values, 0.5),
                lower: quantile_sorted(&values, 0.025),
                upper: quantile_sorted(&values, 0.975),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::QuantileLevel;
    use crate::model::{KernelKind, LinkFunction, PriorSpec};
    use crate::sampler::ChainOutput;

    fn biexp_draws(spread: f64, gamma: f64) -> (PosteriorDraws, ModelSpec) {
        let spec = ModelSpec::new(
            LinkFunction::BiexponentialCd4 { cd4_column: 0 },
            KernelKind::Sl,
            QuantileLevel::new(0.5).unwrap(),
            PriorSpec::default(),
        )
        .unwrap();
        let layout = spec.layout(1);
        let draws: Vec<Vec<f64>> = (0..41)
            .map(|i| {
                let e = spread * (i as f64 - 20.0) / 20.0;
                let mut unc = vec![0.0; layout.dim()];
                unc[..5].copy_from_slice(&[1000f64.ln() + e, 0.5, 100f64.ln() - e, 0.05, gamma]);
                unc
            })
            .collect();
        let out = ChainOutput {
            log_density: vec![0.0; draws.len()],
            draws,
            acceptance: vec![],
        };
        (
            PosteriorDraws::from_chains(&layout, &[], vec![out]).unwrap(),
            spec,
        )
    }

    #[test]
    fn start_value_is_link_at_zero() {
        let (draws, spec) = biexp_draws(0.0, 0.3);
        let curve = population_curve(
            &draws,
            &spec,
            &[0.0, 10.0],
            Cd4Reference {
                baseline: 2.25,
                slope: 0.001,
            },
        )
        .unwrap();
        assert!((curve[0].median - 1100f64.log10()).abs() < 1e-12);
        assert_eq!(curve[0].lower, curve[0].upper);
    }

    #[test]
    fn cd4_ignored_without_gamma() {
        let (draws, spec) = biexp_draws(0.2, 0.0);
        let times = [0.0, 5.0, 20.0];
        let a = population_curve(
            &draws,
            &spec,
            &times,
            Cd4Reference {
                baseline: 2.25,
                slope: 0.001,
            },
        )
        .unwrap();
        let b = population_curve(
            &draws,
            &spec,
            &times,
            Cd4Reference {
                baseline: -4.0,
                slope: 3.0,
            },
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dispersed_draws_widen_band() {
        let cd4 = Cd4Reference {
            baseline: 2.25,
            slope: 0.001,
        };
        let (tight, spec) = biexp_draws(0.05, 0.1);
        let (wide, _) = biexp_draws(0.5, 0.1);
        let a = population_curve(&tight, &spec, &[1.0], cd4).unwrap();
        let b = population_curve(&wide, &spec, &[1.0], cd4).unwrap();
        assert!(b[0].upper - b[0].lower > a[0].upper - a[0].lower);
    }
}
