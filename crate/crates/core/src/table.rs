//! CSV observation tables and the synthetic-observation simulator.
//!
//! Header: `condition,d_millions,loss[,n_enc,n_dec][,metric][,replicate]`.
//! With raw counts the size column is `d` (plain sentence pairs) and is
//! divided by one million on load.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::analyze::{predict, Law};
use crate::error::{Error, Result};
use crate::law::{Metric, Observation};

pub const PAIRS_PER_MILLION: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationTable {
    pub rows: Vec<Observation>,
    /// Replicate ids aligned with `rows`, when the file carries them.
    pub replicates: Option<Vec<u32>>,
    pub source_path: String,
}

impl ObservationTable {
    pub fn conditions(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|o| o.condition.as_str()).collect()
    }

    pub fn groups(&self) -> BTreeMap<String, Vec<Observation>> {
        let mut groups: BTreeMap<String, Vec<Observation>> = BTreeMap::new();
        for o in &self.rows {
            groups.entry(o.condition.clone()).or_default().push(o.clone());
        }
        groups
    }

    /// Rows of one condition; `None` picks the only condition present.
    pub fn curve(&self, condition: Option<&str>) -> Result<Vec<Observation>> {
        let name = match condition {
            Some(c) => c.to_string(),
            None => {
                let all = self.conditions();
                if all.len() != 1 {
                    return Err(Error::Schema(format!(
                        "{} holds {} conditions; pick one",
                        self.source_path,
                        all.len()
                    )));
                }
                all.into_iter().next().unwrap().to_string()
            }
        };
        let rows: Vec<Observation> = self.rows.iter().filter(|o| o.condition == name).cloned().collect();
        if rows.is_empty() {
            return Err(Error::Schema(format!("no rows for condition '{name}'")));
        }
        Ok(rows)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let has_shape = self.rows.iter().any(|o| o.shape().is_some());
        let has_metric = self.rows.iter().any(|o| o.metric != Metric::LogPerplexity);
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["condition", "d_millions", "loss"];
        if has_shape {
            header.extend(["n_enc", "n_dec"]);
        }
        if has_metric {
            header.push("metric");
        }
        if self.replicates.is_some() {
            header.push("replicate");
        }
        out.write_record(&header).map_err(csv_io)?;
        for (i, o) in self.rows.iter().enumerate() {
            let mut rec = vec![o.condition.clone(), o.d_millions.to_string(), o.loss.to_string()];
            if has_shape {
                rec.push(o.n_enc.map(|v| v.to_string()).unwrap_or_default());
                rec.push(o.n_dec.map(|v| v.to_string()).unwrap_or_default());
            }
            if has_metric {
                rec.push(metric_name(o.metric).to_string());
            }
            if let Some(reps) = &self.replicates {
                rec.push(reps[i].to_string());
            }
            out.write_record(&rec).map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn metric_name(m: Metric) -> &'static str {
    match m {
        Metric::LogPerplexity => "log_perplexity",
        Metric::Bleu => "bleu",
    }
}

pub fn load_observations(path: impl AsRef<Path>, raw_counts: bool) -> Result<ObservationTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_observations(file, &path.display().to_string(), raw_counts)
}

pub fn read_observations<R: Read>(reader: R, origin: &str, raw_counts: bool) -> Result<ObservationTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let err = |line: usize, msg: String| Error::Parse { path: origin.to_string(), line, msg };
    let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let size_name = if raw_counts && col("d").is_some() { "d" } else { "d_millions" };
    let scale = if raw_counts { PAIRS_PER_MILLION } else { 1.0 };
    let (Some(cond_col), Some(d_col), Some(loss_col)) = (col("condition"), col(size_name), col("loss")) else {
        return Err(err(1, format!("header must contain condition, {size_name} and loss")));
    };
    let enc_col = col("n_enc");
    let dec_col = col("n_dec");
    if enc_col.is_some() != dec_col.is_some() {
        return Err(err(1, "n_enc and n_dec columns must appear together".into()));
    }
    let metric_col = col("metric");
    let rep_col = col("replicate");

    let mut rows = Vec::new();
    let mut reps = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| err(line, e.to_string()))?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let number = |c: usize, what: &str| -> Result<f64> {
            field(c).parse::<f64>().map_err(|_| err(line, format!("{what} '{}' is not a number", field(c))))
        };
        let count = |c: Option<usize>, what: &str| -> Result<Option<u64>> {
            match c.map(field) {
                None | Some("") => Ok(None),
                Some(v) => v.parse::<u64>().map(Some).map_err(|_| err(line, format!("{what} '{v}' is not a positive integer"))),
            }
        };
        let metric = match metric_col.map(field) {
            None | Some("") | Some("log_perplexity") => Metric::LogPerplexity,
            Some("bleu") => Metric::Bleu,
            Some(other) => return Err(err(line, format!("unknown metric '{other}'"))),
        };
        let obs = Observation {
            condition: field(cond_col).to_string(),
            d_millions: number(d_col, "dataset size")? / scale,
            loss: number(loss_col, "loss")?,
            n_enc: count(enc_col, "n_enc")?,
            n_dec: count(dec_col, "n_dec")?,
            metric,
        };
        obs.validate().map_err(|e| err(line, e.to_string()))?;
        let rep = match rep_col {
            Some(c) => field(c).parse::<u32>().map_err(|_| err(line, format!("replicate '{}' is not an integer", field(c))))?,
            None => 0,
        };
        if !seen.insert((obs.condition.clone(), obs.d_millions.to_bits(), obs.shape(), rep)) {
            return Err(err(line, format!(
                "duplicate row for condition '{}' at d = {}",
                obs.condition, obs.d_millions
            )));
        }
        rows.push(obs);
        reps.push(rep);
    }
    Ok(ObservationTable {
        rows,
        replicates: rep_col.map(|_| reps),
        source_path: origin.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSpec {
    pub law: Law,
    pub shape: Option<(u64, u64)>,
    pub grid: Vec<f64>,
    pub noise_frac: f64,
    pub seed: u64,
    pub condition: String,
    /// Draws per grid point; more than one adds a replicate column.
    pub reps: u32,
}

/// Synthetic observations `l * (1 + noise_frac * z)` with standard normal `z`.
pub fn simulate(spec: &SimulateSpec) -> Result<ObservationTable> {
    match &spec.law {
        Law::Simple(l) => l.validate()?,
        Law::Joint(j) => j.validate()?,
    }
    if spec.grid.is_empty() {
        return Err(Error::Domain("simulation grid is empty".into()));
    }
    if !(spec.noise_frac >= 0.0 && spec.noise_frac.is_finite()) {
        return Err(Error::Domain(format!("noise_frac must be non-negative, got {}", spec.noise_frac)));
    }
    if spec.reps == 0 {
        return Err(Error::Domain("reps must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = Vec::new();
    let mut reps = Vec::new();
    for &d in &spec.grid {
        let clean = predict(&spec.law, d, spec.shape)?;
        for rep in 0..spec.reps {
            let z: f64 = StandardNormal.sample(&mut rng);
            let loss = if spec.noise_frac == 0.0 { clean } else { clean * (1.0 + spec.noise_frac * z) };
            if !(loss > 0.0) {
                return Err(Error::Domain(format!(
                    "noise produced a non-positive loss at d = {d}; lower noise_frac"
                )));
            }
            rows.push(Observation {
                condition: spec.condition.clone(),
                d_millions: d,
                loss,
                n_enc: spec.shape.map(|s| s.0),
                n_dec: spec.shape.map(|s| s.1),
                metric: Metric::LogPerplexity,
            });
            reps.push(rep);
        }
    }
    Ok(ObservationTable {
        rows,
        replicates: (spec.reps > 1).then_some(reps),
        source_path: "<simulated>".into(),
    })
}
