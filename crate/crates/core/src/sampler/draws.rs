//! Retained posterior draws, on the constrained scale with the unconstrained vectors
//! kept alongside for bridge sampling.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::engine::ChainOutput;
use crate::error::{Error, Result};
use crate::model::ParamLayout;
use crate::stats::{mean, quantile_sorted, variance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockAcceptance {
    pub block: String,
    pub per_chain: Vec<f64>,
}

impl BlockAcceptance {
    pub fn mean(&self) -> f64 {
        mean(&self.per_chain)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
}

impl ParameterSummary {
    pub fn from_values(name: &str, values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let sd = if values.len() > 1 {
            variance(values).sqrt()
        } else {
            0.0
        };
        ParameterSummary {
            name: name.to_string(),
            mean: mean(values),
            sd,
            median: quantile_sorted(&sorted, 0.5),
            q025: quantile_sorted(&sorted, 0.025),
            q975: quantile_sorted(&sorted, 0.975),
        }
    }

    pub fn interval_length(&self) -> f64 {
        self.q975 - self.q025
    }

    pub fn covers(&self, value: f64) -> bool {
        self.q025 <= value && value <= self.q975
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    names: Vec<String>,
    chain: Vec<usize>,
    values: Vec<Vec<f64>>,
    unconstrained: Vec<Vec<f64>>,
    lp: Vec<f64>,
    n_chains: usize,
    acceptance: Vec<BlockAcceptance>,
}

fn positive_columns(names: &[String]) -> Vec<usize> {
    names
        .iter()
        .enumerate()
        .filter(|(_, n)| {
            n.as_str() == "sigma" || n.starts_with("kappa") || diagonal_factor_entry(n)
        })
        .map(|(k, _)| k)
        .collect()
}

fn diagonal_factor_entry(name: &str) -> bool {
    name.strip_prefix("Lv[")
        .and_then(|s| s.strip_suffix(']'))
        .and_then(|s| s.split_once(','))
        .is_some_and(|(i, j)| i == j)
}

impl PosteriorDraws {
    pub fn from_chains(
        layout: &ParamLayout,
        block_names: &[String],
        outputs: Vec<ChainOutput>,
    ) -> Result<Self> {
        let names = layout.names();
        let n_chains = outputs.len();
        let mut acceptance: Vec<BlockAcceptance> = block_names
            .iter()
            .map(|b| BlockAcceptance {
                block: b.clone(),
                per_chain: Vec::with_capacity(n_chains),
            })
            .collect();
        let mut draws = PosteriorDraws {
            names,
            chain: Vec::new(),
            values: Vec::new(),
            unconstrained: Vec::new(),
            lp: Vec::new(),
            n_chains,
            acceptance: Vec::new(),
        };
        for (c, out) in outputs.into_iter().enumerate() {
            for (b, rate) in out.acceptance.iter().enumerate() {
                acceptance[b].per_chain.push(*rate);
            }
            for (unc, lp) in out.draws.into_iter().zip(out.log_density) {
                draws.values.push(layout.constrained_row(&unc));
                draws.unconstrained.push(unc);
                draws.lp.push(lp);
                draws.chain.push(c);
            }
        }
        draws.acceptance = acceptance;
        draws.check_support()?;
        Ok(draws)
    }

    fn check_support(&self) -> Result<()> {
        let cols = positive_columns(&self.names);
        for (r, row) in self.values.iter().enumerate() {
            for &k in &cols {
                if !(row[k] > 0.0 && row[k].is_finite()) {
                    return Err(Error::Numeric(format!(
                        "draw {r}: {} = {} is out of support",
                        self.names[k], row[k]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_draws(&self) -> usize {
        self.values.len()
    }

    pub fn n_chains(&self) -> usize {
        self.n_chains
    }

    pub fn chain_labels(&self) -> &[usize] {
        &self.chain
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Unconstrained vectors; empty for draws read back from CSV until
    /// [`PosteriorDraws::attach_layout`] is called.
    pub fn unconstrained(&self) -> &[Vec<f64>] {
        &self.unconstrained
    }

    pub fn log_posterior(&self) -> &[f64] {
        &self.lp
    }

    pub fn acceptance(&self) -> &[BlockAcceptance] {
        &self.acceptance
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        self.column_index(name).map(|k| self.column_at(k))
    }

    pub fn column_at(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[k]).collect()
    }

    /// Column `k` split by chain, in chain order.
    pub fn chains_of(&self, k: usize) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); self.n_chains];
        for (row, &c) in self.values.iter().zip(&self.chain) {
            out[c].push(row[k]);
        }
        out
    }

    pub fn summary(&self, name: &str) -> Option<ParameterSummary> {
        self.column(name)
            .filter(|v| !v.is_empty())
            .map(|v| ParameterSummary::from_values(name, &v))
    }

    /// `n` row indices spread evenly over all retained draws.
    pub fn evenly_spaced(&self, n: usize) -> Vec<usize> {
        let total = self.n_draws();
        if total == 0 || n == 0 {
            return Vec::new();
        }
        (0..n)
            .map(|k| ((k as f64 + 0.5) * total as f64 / n as f64) as usize)
            .map(|i| i.min(total - 1))
            .collect()
    }

    /// Rebuilds the unconstrained vectors for draws loaded from CSV.
    pub fn attach_layout(&mut self, layout: &ParamLayout) -> Result<()> {
        if layout.names() != self.names {
            return Err(Error::config("draw columns do not match the model layout"));
        }
        self.unconstrained = self
            .values
            .iter()
            .map(|row| layout.unconstrain(&layout.theta_from_row(row)?))
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Columns `chain`, every parameter, `lp__`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["chain".to_string()];
        header.extend(self.names.iter().cloned());
        header.push("lp__".into());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for ((row, c), lp) in self.values.iter().zip(&self.chain).zip(&self.lp) {
            record.clear();
            record.push(c.to_string());
            record.extend(row.iter().map(|x| format!("{x:e}")));
            record.push(format!("{lp:e}"));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.len() < 3
            || header[0] != "chain"
            || header.last().map(String::as_str) != Some("lp__")
        {
            return Err(Error::Schema {
                row: 1,
                message: "draws header must be `chain,<params>,lp__`".into(),
            });
        }
        let names = header[1..header.len() - 1].to_vec();
        let mut draws = PosteriorDraws {
            names,
            chain: Vec::new(),
            values: Vec::new(),
            unconstrained: Vec::new(),
            lp: Vec::new(),
            n_chains: 0,
            acceptance: Vec::new(),
        };
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = k + 2;
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|_| Error::Schema {
                    row: line,
                    message: format!("bad number `{s}`"),
                })
            };
            let c: usize = rec[0].trim().parse().map_err(|_| Error::Schema {
                row: line,
                message: format!("bad chain label `{}`", &rec[0]),
            })?;
            let row = (1..rec.len() - 1)
                .map(|j| parse(&rec[j]))
                .collect::<Result<Vec<_>>>()?;
            draws.lp.push(parse(&rec[rec.len() - 1])?);
            draws.values.push(row);
            draws.chain.push(c);
            draws.n_chains = draws.n_chains.max(c + 1);
        }
        draws.check_support()?;
        Ok(draws)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::QuantileLevel;
    use crate::model::{KernelKind, LinkFunction, ModelSpec, PriorSpec};

    fn layout() -> ParamLayout {
        ModelSpec::new(
            LinkFunction::LinearRandomInterceptSlope,
            KernelKind::Sep,
            QuantileLevel::new(0.5).unwrap(),
            PriorSpec::default(),
        )
        .unwrap()
        .layout(1)
    }

    fn fake() -> PosteriorDraws {
        let l = layout();
        let outputs = (0..2)
            .map(|c| ChainOutput {
                draws: (0..4)
                    .map(|i| (0..l.dim()).map(|k| 0.1 * (i + k + c) as f64).collect())
                    .collect(),
                log_density: vec![-1.5, -2.0, -2.5, -3.0],
                acceptance: vec![0.3, 0.5],
            })
            .collect();
        PosteriorDraws::from_chains(&l, &["a".into(), "b".into()], outputs).unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let d = fake();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("chain,beta[1],beta[2],sigma,kappa1,kappa2,\"Lv[1,1]\",\"Lv[2,1]\",\"Lv[2,2]\",\"v[1,1]\","));
        let mut back = PosteriorDraws::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.rows(), d.rows());
        assert_eq!(back.chain_labels(), d.chain_labels());
        back.attach_layout(&layout()).unwrap();
        for (a, b) in back.unconstrained().iter().zip(d.unconstrained()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn chains_and_acceptance() {
        let d = fake();
        assert_eq!(d.n_draws(), 8);
        assert_eq!(d.chains_of(0).len(), 2);
        assert_eq!(d.acceptance()[1].per_chain, vec![0.5, 0.5]);
        assert_eq!(d.evenly_spaced(4), vec![1, 3, 5, 7]);
    }

    #[test]
    fn summary_quantiles() {
        let s = ParameterSummary::from_values("x", &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(s.median, 3.0);
        assert!(s.covers(1.2) && !s.covers(0.5));
        assert!((s.interval_length() - (4.9 - 1.1)).abs() < 1e-12);
    }

    #[test]
    fn diagonal_names() {
        assert!(diagonal_factor_entry("Lv[2,2]"));
        assert!(!diagonal_factor_entry("Lv[2,1]"));
    }
}
