//! JSON fit reports.
//!
//! Reports are written through `serde_json::Value`, whose maps are ordered,
//! so every object comes out with sorted keys and identical inputs give
//! byte-identical files.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::analyze::{asymptotic_loss, marginal_value, transition_point};
use crate::error::{Error, Result};
use crate::fit::{FitConfig, FitResult, JointFitResult, SharedFitResult, TailFitResult};
use crate::law::{CapacityParams, JointLawParams, Observation, PowerLaw, TailLaw};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub input: String,
    pub raw_counts: bool,
    pub config: FitConfig,
    pub seed: u64,
    pub tool_version: String,
}

impl Provenance {
    pub fn new(input: impl Into<String>, raw_counts: bool, config: FitConfig) -> Self {
        Self {
            input: input.into(),
            raw_counts,
            seed: config.seed,
            config,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub objective: f64,
    pub converged: bool,
    pub n_iters: usize,
    pub in_sample_rms: Option<f64>,
    pub held_out_rms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalPoint {
    pub d_millions: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub asymptote: f64,
    pub transition: Option<f64>,
    pub marginal_value: Vec<MarginalPoint>,
}

impl Analysis {
    pub fn of(law: &PowerLaw, at: &[f64]) -> Result<Self> {
        Ok(Self {
            asymptote: asymptotic_loss(law),
            transition: transition_point(law),
            marginal_value: at
                .iter()
                .map(|&d| Ok(MarginalPoint { d_millions: d, value: marginal_value(law, d)? }))
                .collect::<Result<_>>()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub condition: String,
    pub d_millions: f64,
    pub n_enc: Option<u64>,
    pub n_dec: Option<u64>,
    pub observed: f64,
    pub predicted: f64,
    pub residual: f64,
    pub in_sample: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointSection {
    pub params: JointLawParams,
    pub hold_out: Option<(u64, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailSection {
    pub law: TailLaw,
    pub d_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema: u32,
    pub command: String,
    pub provenance: Provenance,
    /// Simple laws keyed by condition (single and shared fits).
    pub laws: BTreeMap<String, PowerLaw>,
    pub joint: Option<JointSection>,
    pub tail: Option<TailSection>,
    pub diagnostics: Diagnostics,
    pub analysis: BTreeMap<String, Analysis>,
    pub points: Vec<Point>,
}

fn sorted_sizes(obs: &[Observation]) -> Vec<f64> {
    let mut d: Vec<f64> = obs.iter().map(|o| o.d_millions).collect();
    d.sort_by(f64::total_cmp);
    d.dedup();
    d
}

fn points_for(obs: &[Observation], residuals: &[f64], predict: impl Fn(&Observation) -> f64) -> Vec<Point> {
    obs.iter()
        .zip(residuals)
        .map(|(o, &r)| Point {
            condition: o.condition.clone(),
            d_millions: o.d_millions,
            n_enc: o.n_enc,
            n_dec: o.n_dec,
            observed: o.loss,
            predicted: predict(o),
            residual: r,
            in_sample: true,
        })
        .collect()
}

fn empty(command: &str, provenance: Provenance, diagnostics: Diagnostics) -> FitReport {
    FitReport {
        schema: SCHEMA_VERSION,
        command: command.to_string(),
        provenance,
        laws: BTreeMap::new(),
        joint: None,
        tail: None,
        diagnostics,
        analysis: BTreeMap::new(),
        points: Vec::new(),
    }
}

impl FitReport {
    pub fn single(obs: &[Observation], fit: &FitResult, provenance: Provenance) -> Result<Self> {
        let condition = obs.first().map(|o| o.condition.clone()).unwrap_or_default();
        let diagnostics = Diagnostics {
            objective: fit.objective,
            converged: fit.converged,
            n_iters: fit.n_iters,
            in_sample_rms: None,
            held_out_rms: None,
        };
        let mut report = empty("fit", provenance, diagnostics);
        report.analysis.insert(condition.clone(), Analysis::of(&fit.law, &sorted_sizes(obs))?);
        report.laws.insert(condition, fit.law);
        report.points = points_for(obs, &fit.residuals, |o| fit.law.eval(o.d_millions).unwrap_or(f64::NAN));
        Ok(report)
    }

    pub fn shared(
        groups: &BTreeMap<String, Vec<Observation>>,
        fit: &SharedFitResult,
        provenance: Provenance,
    ) -> Result<Self> {
        let diagnostics = Diagnostics {
            objective: fit.objective,
            converged: fit.converged,
            n_iters: fit.n_iters,
            in_sample_rms: None,
            held_out_rms: None,
        };
        let mut report = empty("fit-shared", provenance, diagnostics);
        for (name, obs) in groups {
            let law = fit.law(name).ok_or_else(|| Error::Schema(format!("no fit for '{name}'")))?;
            report.analysis.insert(name.clone(), Analysis::of(&law, &sorted_sizes(obs))?);
            report.laws.insert(name.clone(), law);
            report.points.extend(points_for(obs, &fit.residuals[name], |o| {
                law.eval(o.d_millions).unwrap_or(f64::NAN)
            }));
        }
        Ok(report)
    }

    pub fn joint(
        obs: &[Observation],
        fit: &JointFitResult,
        hold_out: Option<(u64, u64)>,
        provenance: Provenance,
    ) -> Result<Self> {
        let diagnostics = Diagnostics {
            objective: fit.objective,
            converged: fit.converged,
            n_iters: fit.n_iters,
            in_sample_rms: fit.in_sample_rms(),
            held_out_rms: fit.held_out_rms(),
        };
        let mut report = empty("fit-joint", provenance, diagnostics);
        report.joint = Some(JointSection { params: fit.params, hold_out });
        report.points = points_for(obs, &fit.residuals, |o| {
            let (ne, nd) = o.shape().unwrap_or((0, 0));
            fit.params.eval(ne, nd, o.d_millions).unwrap_or(f64::NAN)
        });
        for (pt, &s) in report.points.iter_mut().zip(&fit.in_sample) {
            pt.in_sample = s;
        }
        Ok(report)
    }

    pub fn tail(obs: &[Observation], d_min: f64, fit: &TailFitResult, provenance: Provenance) -> Result<Self> {
        let diagnostics = Diagnostics {
            objective: fit.objective,
            converged: fit.converged,
            n_iters: fit.n_iters,
            in_sample_rms: None,
            held_out_rms: None,
        };
        let mut report = empty("fit-tail", provenance, diagnostics);
        report.tail = Some(TailSection { law: fit.law, d_min });
        let used: Vec<Observation> = obs.iter().filter(|o| o.d_millions >= d_min).cloned().collect();
        report.points = points_for(&used, &fit.residuals, |o| fit.law.eval(o.d_millions).unwrap_or(f64::NAN));
        Ok(report)
    }

    pub fn capacity(&self) -> Option<CapacityParams> {
        self.joint.map(|j| j.params.capacity_params())
    }

    /// The simple law for `condition`, or the only one when `None`.
    pub fn law(&self, condition: Option<&str>) -> Result<PowerLaw> {
        match condition {
            Some(c) => self
                .laws
                .get(c)
                .copied()
                .ok_or_else(|| Error::Schema(format!("report has no law for condition '{c}'"))),
            None if self.laws.len() == 1 => Ok(*self.laws.values().next().unwrap()),
            None => Err(Error::Schema(format!(
                "report holds {} laws; name a condition",
                self.laws.len()
            ))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        let mut text = serde_json::to_string_pretty(&value)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        if report.schema != SCHEMA_VERSION {
            return Err(Error::Schema(format!("unsupported report schema {}", report.schema)));
        }
        Ok(report)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Plot-ready table: `condition,d,observed,predicted,residual`.
    pub fn write_table<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        out.write_record(["condition", "d", "observed", "predicted", "residual"]).map_err(io)?;
        for p in &self.points {
            out.write_record([
                p.condition.clone(),
                p.d_millions.to_string(),
                p.observed.to_string(),
                p.predicted.to_string(),
                p.residual.to_string(),
            ])
            .map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{fit_shared, fit_single};

    fn curve(name: &str, law: &PowerLaw) -> Vec<Observation> {
        (0..10)
            .map(|k| {
                let d = 2f64.powi(k);
                Observation::new(name, d, law.eval(d).unwrap() * (1.0 + 0.003 * ((k % 3) as f64 - 1.0))).unwrap()
            })
            .collect()
    }

    #[test]
    fn json_is_a_fixed_point() {
        let obs = curve("base", &PowerLaw::new(1.969, 0.057, 0.285).unwrap());
        let cfg = FitConfig::with_seed(1);
        let fit = fit_single(&obs, &cfg).unwrap();
        let report = FitReport::single(&obs, &fit, Provenance::new("x.csv", false, cfg)).unwrap();
        let text = report.to_json().unwrap();
        let back = FitReport::from_json(&text).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.to_json().unwrap(), text);
        assert_eq!(back.law(None).unwrap(), fit.law);
    }

    #[test]
    fn keys_are_sorted() {
        let obs = curve("base", &PowerLaw::new(1.969, 0.057, 0.285).unwrap());
        let cfg = FitConfig::default();
        let fit = fit_single(&obs, &cfg).unwrap();
        let text = FitReport::single(&obs, &fit, Provenance::new("x.csv", false, cfg)).unwrap().to_json().unwrap();
        let top: Vec<&str> = text
            .lines()
            .filter(|l| l.starts_with("  \"") && !l.starts_with("   "))
            .map(|l| l.trim().split('"').nth(1).unwrap())
            .collect();
        let mut sorted = top.clone();
        sorted.sort();
        assert_eq!(top, sorted);
    }

    #[test]
    fn shared_report_exposes_each_condition() {
        let mut groups = BTreeMap::new();
        groups.insert("a".to_string(), curve("a", &PowerLaw::new(1.969, 0.057, 0.285).unwrap()));
        groups.insert("b".to_string(), curve("b", &PowerLaw::new(1.817, 0.11, 0.285).unwrap()));
        let cfg = FitConfig::default();
        let fit = fit_shared(&groups, &cfg).unwrap();
        let report = FitReport::shared(&groups, &fit, Provenance::new("x.csv", false, cfg)).unwrap();
        assert_eq!(report.laws.len(), 2);
        assert_eq!(report.law(Some("a")).unwrap().p, report.law(Some("b")).unwrap().p);
        assert!(report.law(None).is_err());
        assert_eq!(report.points.len(), 20);
        let mut table = Vec::new();
        report.write_table(&mut table).unwrap();
        let text = String::from_utf8(table).unwrap();
        assert!(text.starts_with("condition,d,observed,predicted,residual\n"));
        assert_eq!(text.lines().count(), 21);
    }

    #[test]
    fn rejects_unknown_schema() {
        let obs = curve("base", &PowerLaw::new(1.969, 0.057, 0.285).unwrap());
        let cfg = FitConfig::default();
        let fit = fit_single(&obs, &cfg).unwrap();
        let mut report = FitReport::single(&obs, &fit, Provenance::new("x.csv", false, cfg)).unwrap();
        report.schema = 2;
        assert!(FitReport::from_json(&report.to_json().unwrap()).is_err());
    }
}
