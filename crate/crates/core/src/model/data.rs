//! Longitudinal observations with censoring, and the dataset CSV format.
//!
//! CSV schema (header required):
//! `subject_id,time,response,censor,bound2,cov1..covK` with `censor` one of
//! `obs`, `left`, `right`, `interval`. For interval rows `response` holds the lower
//! bound and `bound2` the upper; `bound2` is empty otherwise.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const FIXED_COLUMNS: [&str; 5] = ["subject_id", "time", "response", "censor", "bound2"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CensorStatus {
    Observed,
    /// Known only to lie at or below the bound.
    Left(f64),
    /// Known only to lie above the bound.
    Right(f64),
    Interval(f64, f64),
}

impl CensorStatus {
    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        if lower < upper {
            Ok(CensorStatus::Interval(lower, upper))
        } else {
            Err(Error::domain(format!(
                "interval censoring needs lower < upper, got ({lower}, {upper})"
            )))
        }
    }

    pub fn is_observed(&self) -> bool {
        matches!(self, CensorStatus::Observed)
    }

    pub fn label(&self) -> &'static str {
        match self {
            CensorStatus::Observed => "obs",
            CensorStatus::Left(_) => "left",
            CensorStatus::Right(_) => "right",
            CensorStatus::Interval(..) => "interval",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub subject: usize,
    pub time: f64,
    /// Measured value, or the censoring bound (lower bound for intervals).
    pub response: f64,
    pub censor: CensorStatus,
    pub covariates: Vec<f64>,
}

impl Observation {
    pub fn observed(subject: usize, time: f64, response: f64, covariates: Vec<f64>) -> Self {
        Observation {
            subject,
            time,
            response,
            censor: CensorStatus::Observed,
            covariates,
        }
    }

    pub fn left_censored(subject: usize, time: f64, bound: f64, covariates: Vec<f64>) -> Self {
        Observation {
            subject,
            time,
            response: bound,
            censor: CensorStatus::Left(bound),
            covariates,
        }
    }
}

/// Observations grouped by subject, subjects indexed contiguously from zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    offsets: Vec<usize>,
    subject_ids: Vec<String>,
    covariate_names: Vec<String>,
}

impl Dataset {
    /// Groups observations by subject (stable within subject). Subject indices must
    /// cover `0..N` with every subject observed at least once.
    pub fn new(mut observations: Vec<Observation>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::domain("dataset has no observations"));
        }
        let n_cov = observations[0].covariates.len();
        for (k, obs) in observations.iter().enumerate() {
            if !obs.time.is_finite() {
                return Err(Error::domain(format!(
                    "observation {k} has non-finite time"
                )));
            }
            if !obs.response.is_finite() {
                return Err(Error::domain(format!(
                    "observation {k} has non-finite response"
                )));
            }
            if obs.covariates.len() != n_cov {
                return Err(Error::domain(format!(
                    "observation {k} has {} covariates, expected {n_cov}",
                    obs.covariates.len()
                )));
            }
            if let CensorStatus::Interval(l, u) = obs.censor {
                if !(l < u) {
                    return Err(Error::domain(format!(
                        "observation {k} has empty censoring interval"
                    )));
                }
            }
        }
        observations.sort_by_key(|o| o.subject);
        let n_subjects = observations.last().map(|o| o.subject + 1).unwrap_or(0);
        let mut offsets = Vec::with_capacity(n_subjects + 1);
        offsets.push(0);
        let mut cursor = 0;
        for i in 0..n_subjects {
            let start = cursor;
            while cursor < observations.len() && observations[cursor].subject == i {
                cursor += 1;
            }
            if cursor == start {
                return Err(Error::domain(format!("subject {i} has no observations")));
            }
            offsets.push(cursor);
        }
        let subject_ids = (0..n_subjects).map(|i| (i + 1).to_string()).collect();
        let covariate_names = (1..=n_cov).map(|k| format!("cov{k}")).collect();
        Ok(Dataset {
            observations,
            offsets,
            subject_ids,
            covariate_names,
        })
    }

    pub fn with_labels(
        mut self,
        subject_ids: Vec<String>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        if subject_ids.len() != self.n_subjects() {
            return Err(Error::Dimension {
                expected: self.n_subjects(),
                actual: subject_ids.len(),
            });
        }
        if covariate_names.len() != self.n_covariates() {
            return Err(Error::Dimension {
                expected: self.n_covariates(),
                actual: covariate_names.len(),
            });
        }
        self.subject_ids = subject_ids;
        self.covariate_names = covariate_names;
        Ok(self)
    }

    pub fn n_subjects(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_obs(&self) -> usize {
        self.observations.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.observations[0].covariates.len()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn subject(&self, i: usize) -> &[Observation] {
        &self.observations[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Index range of subject `i` within [`Dataset::observations`].
    pub fn subject_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n_censored(&self) -> usize {
        self.observations
            .iter()
            .filter(|o| !o.censor.is_observed())
            .count()
    }

    /// Replaces every time by `(time - shift) / scale`.
    pub fn transform_time(&mut self, shift: f64, scale: f64) -> Result<()> {
        if !(scale.is_finite() && scale != 0.0 && shift.is_finite()) {
            return Err(Error::config(format!(
                "invalid time transform shift={shift} scale={scale}"
            )));
        }
        for o in &mut self.observations {
            o.time = (o.time - shift) / scale;
        }
        Ok(())
    }

    /// Replaces covariate `index` by `(x - shift) / scale`.
    pub fn transform_covariate(&mut self, index: usize, shift: f64, scale: f64) -> Result<()> {
        if index >= self.n_covariates() {
            return Err(Error::config(format!(
                "covariate index {index} out of range"
            )));
        }
        if !(scale.is_finite() && scale != 0.0 && shift.is_finite()) {
            return Err(Error::config(format!(
                "invalid covariate transform shift={shift} scale={scale}"
            )));
        }
        for o in &mut self.observations {
            o.covariates[index] = (o.covariates[index] - shift) / scale;
        }
        Ok(())
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    /// Parses the dataset CSV. Schema errors carry the 1-based line number.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(|e| schema(1, e.to_string()))?.clone();
        if headers.len() < FIXED_COLUMNS.len() {
            return Err(schema(
                1,
                format!("expected at least {} columns", FIXED_COLUMNS.len()),
            ));
        }
        for (k, expected) in FIXED_COLUMNS.iter().enumerate() {
            if &headers[k] != *expected {
                return Err(schema(
                    1,
                    format!(
                        "column {} must be `{expected}`, found `{}`",
                        k + 1,
                        &headers[k]
                    ),
                ));
            }
        }
        let covariate_names: Vec<String> = headers
            .iter()
            .skip(FIXED_COLUMNS.len())
            .map(str::to_string)
            .collect();

        let mut index_of: HashMap<String, usize> = HashMap::new();
        let mut subject_ids = Vec::new();
        let mut observations = Vec::new();
        for (k, record) in rdr.records().enumerate() {
            let line = k + 2;
            let record = record.map_err(|e| schema(line, e.to_string()))?;
            if record.len() != headers.len() {
                return Err(schema(
                    line,
                    format!("expected {} fields, found {}", headers.len(), record.len()),
                ));
            }
            let id = record[0].to_string();
            if id.is_empty() {
                return Err(schema(line, "empty subject_id".into()));
            }
            let subject = *index_of.entry(id.clone()).or_insert_with(|| {
                subject_ids.push(id);
                subject_ids.len() - 1
            });
            let time = parse_number(&record[1], "time", line)?;
            let response = parse_number(&record[2], "response", line)?;
            let bound2 = &record[4];
            let censor = match &record[3] {
                "obs" => CensorStatus::Observed,
                "left" => CensorStatus::Left(response),
                "right" => CensorStatus::Right(response),
                "interval" => {
                    let upper = parse_number(bound2, "bound2", line)?;
                    if !(response < upper) {
                        return Err(schema(
                            line,
                            format!("interval needs response < bound2, got {response} >= {upper}"),
                        ));
                    }
                    CensorStatus::Interval(response, upper)
                }
                other => {
                    return Err(schema(
                        line,
                        format!("censor must be obs|left|right|interval, found `{other}`"),
                    ))
                }
            };
            if !matches!(censor, CensorStatus::Interval(..)) && !bound2.is_empty() {
                return Err(schema(
                    line,
                    "bound2 must be empty unless censor is interval".into(),
                ));
            }
            let covariates = record
                .iter()
                .skip(FIXED_COLUMNS.len())
                .zip(&covariate_names)
                .map(|(field, name)| parse_number(field, name, line))
                .collect::<Result<Vec<_>>>()?;
            observations.push(Observation {
                subject,
                time,
                response,
                censor,
                covariates,
            });
        }
        if observations.is_empty() {
            return Err(schema(1, "no data rows".into()));
        }
        Dataset::new(observations)?.with_labels(subject_ids, covariate_names)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for o in &self.observations {
            let bound2 = match o.censor {
                CensorStatus::Interval(_, u) => u.to_string(),
                _ => String::new(),
            };
            let mut row = vec![
                self.subject_ids[o.subject].clone(),
                o.time.to_string(),
                o.response.to_string(),
                o.censor.label().to_string(),
                bound2,
            ];
            row.extend(o.covariates.iter().map(|c| c.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn schema(row: usize, message: String) -> Error {
    Error::Schema { row, message }
}

fn parse_number(field: &str, column: &str, line: usize) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| {
        schema(
            line,
            format!("column `{column}` is not a number: `{field}`"),
        )
    })?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(schema(line, format!("column `{column}` is not finite")))
    }
}
