//! Time-varying quantile thresholds, debt-capacity indicators, and policy
//! scaling.
//!
//! The firm-level indicator is d_ist = 1{y < g_st(gamma)} with the quantile
//! taken over the firm's industry cross-section; the industry-level
//! proportion is pi_st = mean 1{y < g_t(gamma)} against the economy-wide
//! quantile. The inequality is strict: ties count as at capacity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel_io::PanelDataset;
use crate::quantile::quantile_sorted;

/// Quantile threshold pair; single-threshold mode is `gamma_pre == gamma_post`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams {
    pub gamma_pre: f64,
    pub gamma_post: f64,
}

impl ThresholdParams {
    pub fn single(gamma: f64) -> Self {
        ThresholdParams { gamma_pre: gamma, gamma_post: gamma }
    }

    pub fn validate(&self) -> Result<()> {
        for g in [self.gamma_pre, self.gamma_post] {
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::Config(format!("threshold quantile {g} outside (0,1)")));
            }
        }
        Ok(())
    }
}

/// Raw policy series with its policy-on window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySeries {
    pub name: String,
    pub raw: BTreeMap<i32, f64>,
    pub policy_on: BTreeSet<i32>,
}

impl PolicySeries {
    pub fn validate(&self) -> Result<()> {
        if let Some((q, v)) = self.raw.iter().find(|(_, v)| **v < 0.0) {
            return Err(Error::Scaling(format!("policy `{}` has negative level {v} at quarter {q}", self.name)));
        }
        Ok(())
    }

    /// Read `quarter,value,policy_on` CSV.
    pub fn from_csv(name: &str, path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let col = |n: &str| headers.iter().position(|h| h == n).ok_or_else(|| Error::MissingColumn(n.into()));
        let (qc, vc, oc) = (col("quarter")?, col("value")?, col("policy_on")?);
        let mut raw = BTreeMap::new();
        let mut policy_on = BTreeSet::new();
        for (idx, rec) in reader.records().enumerate() {
            let rec = rec?;
            let row = idx + 1;
            let parse = |s: &str, what: &str| -> Result<f64> {
                s.trim().parse().map_err(|_| Error::Parse { row, msg: format!("non-numeric {what} `{s}`") })
            };
            let quarter = crate::panel_io::parse_quarter(rec.get(qc).unwrap_or(""))
                .ok_or_else(|| Error::Parse { row, msg: "invalid quarter".into() })?;
            let value = parse(rec.get(vc).unwrap_or(""), "value")?;
            let on = parse(rec.get(oc).unwrap_or(""), "policy_on")?;
            raw.insert(quarter, value);
            if on != 0.0 {
                policy_on.insert(quarter);
            }
        }
        let series = PolicySeries { name: name.to_string(), raw, policy_on };
        series.validate()?;
        Ok(series)
    }
}

/// Scaled policy q_t: zero outside the policy-on window, unit denominator
/// mean inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledPolicy {
    pub name: String,
    pub values: BTreeMap<i32, f64>,
    pub policy_on: BTreeSet<i32>,
}

impl ScaledPolicy {
    /// q_t; zero for quarters outside the policy-on window.
    pub fn value(&self, quarter: i32) -> f64 {
        self.values.get(&quarter).copied().unwrap_or(0.0)
    }
}

/// Scale a series by its own policy-on mean: q_t = Q_t / mean(Q) over the
/// window, zero elsewhere.
pub fn scale_policy(p: &PolicySeries) -> Result<ScaledPolicy> {
    scale_policy_with(p, p)
}

/// Scale a component series by a designated total's policy-on mean, so that
/// total-scaled components sum to the total-scaled series.
pub fn scale_policy_with(p: &PolicySeries, denominator: &PolicySeries) -> Result<ScaledPolicy> {
    p.validate()?;
    denominator.validate()?;
    if p.policy_on.is_empty() {
        return Err(Error::Scaling(format!("policy `{}` has an empty policy-on window", p.name)));
    }
    let mut sum = 0.0;
    for q in &p.policy_on {
        sum += denominator.raw.get(q).copied().ok_or_else(|| {
            Error::Scaling(format!("denominator `{}` missing quarter {q}", denominator.name))
        })?;
    }
    let mean = sum / p.policy_on.len() as f64;
    if mean <= 0.0 {
        return Err(Error::Scaling(format!("denominator `{}` has non-positive policy-on mean", denominator.name)));
    }
    let values = p
        .policy_on
        .iter()
        .map(|q| (*q, p.raw.get(q).copied().unwrap_or(0.0) / mean))
        .collect();
    Ok(ScaledPolicy { name: p.name.clone(), values, policy_on: p.policy_on.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CapacityLevel {
    Firm,
    Industry,
}

/// Debt-capacity indicators at one quantile threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityPanel {
    pub gamma: f64,
    pub level: CapacityLevel,
    /// Firm-level indicators d_ist (firm level only).
    pub d: BTreeMap<(String, i32), u8>,
    /// Industry proportions pi_st (industry level only).
    pub pi: BTreeMap<(String, i32), f64>,
}

impl CapacityPanel {
    pub fn pi_at(&self, industry: &str, quarter: i32) -> Option<f64> {
        self.pi.get(&(industry.to_string(), quarter)).copied()
    }

    /// Long-format CSV (`industry,quarter,pi` or `firm,quarter,d`).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        match self.level {
            CapacityLevel::Industry => {
                w.write_record(["industry", "quarter", "pi"])?;
                for ((s, t), v) in &self.pi {
                    w.write_record([s.as_str(), &t.to_string(), &format!("{v}")])?;
                }
            }
            CapacityLevel::Firm => {
                w.write_record(["firm", "quarter", "d"])?;
                for ((f, t), v) in &self.d {
                    w.write_record([f.as_str(), &t.to_string(), &v.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn sorted_y_by_quarter(ds: &PanelDataset) -> BTreeMap<i32, Vec<f64>> {
    let mut map: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for o in &ds.observations {
        map.entry(o.quarter).or_default().push(o.y);
    }
    for v in map.values_mut() {
        v.sort_by(|a, b| a.partial_cmp(b).expect("NaN leverage"));
    }
    map
}

fn sorted_y_by_group_quarter(ds: &PanelDataset) -> BTreeMap<(String, i32), Vec<f64>> {
    let mut map: BTreeMap<(String, i32), Vec<f64>> = BTreeMap::new();
    for o in &ds.observations {
        map.entry((ds.group_of(&o.firm_id).to_string(), o.quarter)).or_default().push(o.y);
    }
    for v in map.values_mut() {
        v.sort_by(|a, b| a.partial_cmp(b).expect("NaN leverage"));
    }
    map
}

/// g_t(gamma): quantile of the economy-wide leverage cross-section at `t`.
pub fn economy_quantile(ds: &PanelDataset, t: i32, gamma: f64) -> Result<f64> {
    let mut values: Vec<f64> = ds.observations.iter().filter(|o| o.quarter == t).map(|o| o.y).collect();
    if values.is_empty() {
        return Err(Error::MissingPeriod { quarter: t, industry: None });
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("NaN leverage"));
    Ok(quantile_sorted(&values, gamma))
}

/// g_st(gamma): quantile of industry `s`'s leverage cross-section at `t`.
pub fn industry_quantile(ds: &PanelDataset, s: &str, t: i32, gamma: f64) -> Result<f64> {
    let mut values: Vec<f64> = ds
        .observations
        .iter()
        .filter(|o| o.quarter == t && ds.group_of(&o.firm_id) == s)
        .map(|o| o.y)
        .collect();
    if values.is_empty() {
        return Err(Error::MissingPeriod { quarter: t, industry: Some(s.to_string()) });
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("NaN leverage"));
    Ok(quantile_sorted(&values, gamma))
}

/// Compute capacity indicators at one threshold quantile.
pub fn capacity_indicators(ds: &PanelDataset, gamma: f64, level: CapacityLevel) -> Result<CapacityPanel> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Config(format!("quantile {gamma} outside (0,1)")));
    }
    let mut panel = CapacityPanel { gamma, level, d: BTreeMap::new(), pi: BTreeMap::new() };
    match level {
        CapacityLevel::Firm => {
            let by_group = sorted_y_by_group_quarter(ds);
            for o in &ds.observations {
                let key = (ds.group_of(&o.firm_id).to_string(), o.quarter);
                let g_st = quantile_sorted(&by_group[&key], gamma);
                panel.d.insert((o.firm_id.clone(), o.quarter), u8::from(o.y < g_st));
            }
        }
        CapacityLevel::Industry => {
            let by_quarter = sorted_y_by_quarter(ds);
            let mut counts: BTreeMap<(String, i32), (usize, usize)> = BTreeMap::new();
            for o in &ds.observations {
                let g_t = quantile_sorted(&by_quarter[&o.quarter], gamma);
                let e = counts.entry((ds.group_of(&o.firm_id).to_string(), o.quarter)).or_default();
                e.0 += usize::from(o.y < g_t);
                e.1 += 1;
            }
            for ((s, t), (below, n)) in counts {
                panel.pi.insert((s, t), below as f64 / n as f64);
            }
        }
    }
    Ok(panel)
}

/// Text preview of a capacity panel, for CLI summaries.
pub fn capacity_summary(panel: &CapacityPanel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "capacity panel: gamma={} level={:?}", panel.gamma, panel.level);
    let n = match panel.level {
        CapacityLevel::Firm => panel.d.len(),
        CapacityLevel::Industry => panel.pi.len(),
    };
    let _ = writeln!(out, "cells: {n}");
    out
}
