//! Firm-quarter panel ingestion, sample-selection filters, and industry
//! grouping.
//!
//! The filter cascade runs in a fixed order: (1) drop firms with interior
//! gaps in required variables, (2) keep each firm's longest consecutive run
//! and drop firms with runs shorter than the minimum, (3) drop firms with
//! leverage outside [0, 1], (4) drop firms with designated variables beyond
//! extreme tail percentiles (computed on the pooled post-(3) sample), and
//! (5) winsorize designated variables. Tail drops come before
//! winsorization.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantile::quantile;

/// One firm-quarter row. Control values are parallel to the dataset's
/// `control_names`; `f64::NAN` marks a missing value (only possible before
/// filtering).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub firm_id: String,
    pub industry_code: String,
    pub quarter: i32,
    pub y: f64,
    pub controls: Vec<f64>,
}

/// Unbalanced firm-quarter panel, sorted by (firm, quarter).
///
/// `industry_map` sends each firm to its industry group id; it starts as the
/// raw 3-digit code and is rewritten by [`group_industries`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    pub control_names: Vec<String>,
    pub observations: Vec<Observation>,
    pub industry_map: BTreeMap<String, String>,
    pub time_range: (i32, i32),
}

impl PanelDataset {
    pub fn from_observations(control_names: Vec<String>, mut obs: Vec<Observation>) -> Result<Self> {
        obs.sort_by(|a, b| (a.firm_id.as_str(), a.quarter).cmp(&(b.firm_id.as_str(), b.quarter)));
        for w in obs.windows(2) {
            if w[0].firm_id == w[1].firm_id && w[0].quarter == w[1].quarter {
                return Err(Error::DuplicateObservation {
                    firm: w[0].firm_id.clone(),
                    quarter: w[0].quarter,
                });
            }
        }
        let industry_map = obs
            .iter()
            .map(|o| (o.firm_id.clone(), o.industry_code.clone()))
            .collect();
        let time_range = match (obs.iter().map(|o| o.quarter).min(), obs.iter().map(|o| o.quarter).max()) {
            (Some(lo), Some(hi)) => (lo, hi),
            _ => (0, 0),
        };
        Ok(PanelDataset { control_names, observations: obs, industry_map, time_range })
    }

    pub fn n_firms(&self) -> usize {
        self.industry_map.len()
    }

    pub fn n_obs(&self) -> usize {
        self.observations.len()
    }

    pub fn control_index(&self, name: &str) -> Option<usize> {
        self.control_names.iter().position(|c| c == name)
    }

    /// Industry group of a firm (raw code until regrouping).
    pub fn group_of(&self, firm_id: &str) -> &str {
        self.industry_map.get(firm_id).map(|s| s.as_str()).unwrap_or("")
    }

    /// Ranges of `observations` belonging to each firm, in sorted firm order.
    pub fn firm_spans(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut spans = Vec::new();
        let mut start = 0usize;
        for i in 1..=self.observations.len() {
            if i == self.observations.len() || self.observations[i].firm_id != self.observations[start].firm_id {
                spans.push((self.observations[start].firm_id.clone(), start..i));
                start = i;
            }
        }
        spans
    }

    /// Keep only firms with at least `min_obs` observations.
    pub fn restrict_min_obs(&self, min_obs: usize) -> PanelDataset {
        let keep: BTreeSet<String> = self
            .firm_spans()
            .into_iter()
            .filter(|(_, r)| r.len() >= min_obs)
            .map(|(f, _)| f)
            .collect();
        self.retain_firms(&keep)
    }

    fn retain_firms(&self, keep: &BTreeSet<String>) -> PanelDataset {
        let obs: Vec<Observation> = self
            .observations
            .iter()
            .filter(|o| keep.contains(&o.firm_id))
            .cloned()
            .collect();
        let industry_map = self
            .industry_map
            .iter()
            .filter(|(f, _)| keep.contains(*f))
            .map(|(f, g)| (f.clone(), g.clone()))
            .collect();
        let time_range = match (obs.iter().map(|o| o.quarter).min(), obs.iter().map(|o| o.quarter).max()) {
            (Some(lo), Some(hi)) => (lo, hi),
            _ => (0, 0),
        };
        PanelDataset { control_names: self.control_names.clone(), observations: obs, industry_map, time_range }
    }
}

/// Column-name mapping for CSV ingestion. Canonical columns are
/// `firm,industry,quarter,y`; every other header is treated as a control
/// unless `controls` is declared explicitly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub firm: String,
    pub industry: String,
    pub quarter: String,
    pub y: String,
    /// Control columns to load; `None` loads all remaining columns.
    pub controls: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            firm: "firm".into(),
            industry: "industry".into(),
            quarter: "quarter".into(),
            y: "y".into(),
            controls: None,
        }
    }
}

/// Parse a quarter label: a plain integer, or a calendar label like
/// `2007Q1` mapped to `year*4 + (q-1)`.
pub fn parse_quarter(s: &str) -> Option<i32> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i32>() {
        return Some(v);
    }
    let upper = s.to_ascii_uppercase();
    let (year, q) = upper.split_once('Q')?;
    let year: i32 = year.trim().parse().ok()?;
    let q: i32 = q.trim().parse().ok()?;
    if !(1..=4).contains(&q) {
        return None;
    }
    Some(year * 4 + (q - 1))
}

/// Load a firm-quarter panel from CSV. No filtering is applied.
pub fn load_panel(path: &Path, schema: &CsvSchema) -> Result<PanelDataset> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let firm_col = col(&schema.firm)?;
    let industry_col = col(&schema.industry)?;
    let quarter_col = col(&schema.quarter)?;
    let y_col = col(&schema.y)?;

    let control_names: Vec<String> = match &schema.controls {
        Some(declared) => {
            for c in declared {
                col(c)?;
            }
            declared.clone()
        }
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| ![firm_col, industry_col, quarter_col, y_col].contains(i))
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let control_cols: Vec<usize> = control_names.iter().map(|c| col(c)).collect::<Result<_>>()?;

    let mut observations = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1; // 1-based data row for error messages
        let record = record?;
        let raw = |c: usize| record.get(c).unwrap_or("").trim();

        let quarter = parse_quarter(raw(quarter_col)).ok_or_else(|| Error::Parse {
            row,
            msg: format!("invalid quarter `{}`", raw(quarter_col)),
        })?;
        let parse_num = |field: &str, what: &str| -> Result<f64> {
            if field.is_empty() {
                return Ok(f64::NAN);
            }
            field.parse::<f64>().map_err(|_| Error::Parse {
                row,
                msg: format!("non-numeric {what} `{field}`"),
            })
        };
        let y = parse_num(raw(y_col), "y")?;
        let controls = control_cols
            .iter()
            .zip(&control_names)
            .map(|(&c, name)| parse_num(raw(c), name))
            .collect::<Result<Vec<f64>>>()?;

        observations.push(Observation {
            firm_id: raw(firm_col).to_string(),
            industry_code: raw(industry_col).to_string(),
            quarter,
            y,
            controls,
        });
    }

    PanelDataset::from_observations(control_names, observations)
}

/// Write a panel back to CSV in the canonical `firm,industry,quarter,y,...`
/// layout. Floats use shortest round-trip formatting so that
/// `load_panel(write_panel(ds)) == ds` for complete data.
pub fn write_panel(ds: &PanelDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["firm".to_string(), "industry".into(), "quarter".into(), "y".into()];
    header.extend(ds.control_names.iter().cloned());
    w.write_record(&header)?;
    for o in &ds.observations {
        let mut rec = vec![
            o.firm_id.clone(),
            o.industry_code.clone(),
            o.quarter.to_string(),
            format!("{}", o.y),
        ];
        rec.extend(o.controls.iter().map(|v| if v.is_nan() { String::new() } else { format!("{v}") }));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Two-sided percentile rule for a designated variable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailRule {
    pub var: String,
    /// Drop/winsorize below this pooled percentile (e.g. 0.0005 for 0.05%).
    pub lower: Option<f64>,
    /// Drop/winsorize above this pooled percentile (e.g. 0.9995 for 99.95%).
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Minimum length of a firm's longest consecutive-quarter run.
    pub min_consecutive: usize,
    /// Inclusive bounds for the dependent variable.
    pub leverage_bounds: (f64, f64),
    /// Variables checked for interior gaps; `None` means y plus every control.
    pub required_vars: Option<Vec<String>>,
    /// Firms holding values beyond these pooled percentiles are dropped.
    pub tail_drop: Vec<TailRule>,
    /// Variables winsorized at these pooled percentiles after tail drops.
    pub winsorize: Vec<TailRule>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_consecutive: 5,
            leverage_bounds: (0.0, 1.0),
            required_vars: None,
            tail_drop: Vec::new(),
            winsorize: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub firms_dropped: usize,
    pub obs_dropped: usize,
    pub firms_remaining: usize,
    pub obs_remaining: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct YearReport {
    pub year: i32,
    pub initial_firms: usize,
    pub surviving_firms: usize,
    pub pass_pct: f64,
}

/// Per-stage drop counts plus per-year pass percentages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterReport {
    pub stages: Vec<StageReport>,
    pub yearly: Vec<YearReport>,
}

impl FilterReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned text table, one row per stage plus the yearly pass rates.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<28} {:>12} {:>12} {:>12} {:>12}",
            "stage", "firms drop", "obs drop", "firms left", "obs left"
        );
        let _ = writeln!(out, "{}", "-".repeat(80));
        for s in &self.stages {
            let _ = writeln!(
                out,
                "{:<28} {:>12} {:>12} {:>12} {:>12}",
                s.stage, s.firms_dropped, s.obs_dropped, s.firms_remaining, s.obs_remaining
            );
        }
        if !self.yearly.is_empty() {
            let _ = writeln!(out, "\n{:<10} {:>14} {:>16} {:>10}", "year", "initial firms", "surviving firms", "pass %");
            let _ = writeln!(out, "{}", "-".repeat(54));
            for y in &self.yearly {
                let _ = writeln!(out, "{:<10} {:>14} {:>16} {:>9.1}%", y.year, y.initial_firms, y.surviving_firms, y.pass_pct);
            }
        }
        out
    }
}

struct FirmBlock {
    firm: String,
    obs: Vec<Observation>,
}

fn blocks(ds: &PanelDataset) -> Vec<FirmBlock> {
    ds.firm_spans()
        .into_iter()
        .map(|(firm, r)| FirmBlock { firm, obs: ds.observations[r].to_vec() })
        .collect()
}

fn count_obs(blocks: &[FirmBlock]) -> usize {
    blocks.iter().map(|b| b.obs.len()).sum()
}

/// Apply the five-stage filter cascade in its fixed order.
pub fn apply_filters(raw: &PanelDataset, cfg: &FilterConfig) -> Result<(PanelDataset, FilterReport)> {
    let required: Vec<String> = match &cfg.required_vars {
        Some(v) => v.clone(),
        None => {
            let mut v = vec!["y".to_string()];
            v.extend(raw.control_names.iter().cloned());
            v
        }
    };
    for rule in cfg.tail_drop.iter().chain(&cfg.winsorize) {
        if rule.var != "y" && raw.control_index(&rule.var).is_none() {
            return Err(Error::MissingColumn(rule.var.clone()));
        }
    }
    let var_value = |o: &Observation, var: &str| -> f64 {
        if var == "y" {
            o.y
        } else {
            raw.control_index(var).map(|i| o.controls[i]).unwrap_or(f64::NAN)
        }
    };

    let mut stages = Vec::new();
    let mut blocks = blocks(raw);
    let initial_yearly = yearly_firms(&blocks);
    let mut record_stage = |name: &str, blocks: &[FirmBlock], prev_firms: usize, prev_obs: usize| {
        let firms = blocks.len();
        let obs = count_obs(blocks);
        stages.push(StageReport {
            stage: name.to_string(),
            firms_dropped: prev_firms - firms,
            obs_dropped: prev_obs - obs,
            firms_remaining: firms,
            obs_remaining: obs,
        });
    };

    // Stage 1: interior gaps in required variables; edge rows with missing
    // required values are trimmed.
    let (mut prev_firms, mut prev_obs) = (blocks.len(), count_obs(&blocks));
    blocks.retain_mut(|b| {
        for var in &required {
            let present: Vec<bool> = b.obs.iter().map(|o| !var_value(o, var).is_nan()).collect();
            let first = present.iter().position(|&p| p);
            let last = present.iter().rposition(|&p| p);
            if let (Some(first), Some(last)) = (first, last) {
                if present[first..=last].iter().any(|&p| !p) {
                    return false; // hole strictly inside the observed span
                }
            }
        }
        b.obs.retain(|o| required.iter().all(|v| !var_value(o, v).is_nan()));
        !b.obs.is_empty()
    });
    record_stage("gaps_in_required_vars", &blocks, prev_firms, prev_obs);

    // Stage 2: longest consecutive-quarter run (earliest on ties).
    (prev_firms, prev_obs) = (blocks.len(), count_obs(&blocks));
    blocks.retain_mut(|b| {
        let quarters: Vec<i32> = b.obs.iter().map(|o| o.quarter).collect();
        let (mut best_start, mut best_len) = (0usize, 1usize);
        let (mut start, mut len) = (0usize, 1usize);
        for i in 1..quarters.len() {
            if quarters[i] == quarters[i - 1] + 1 {
                len += 1;
            } else {
                start = i;
                len = 1;
            }
            if len > best_len {
                best_len = len;
                best_start = start;
            }
        }
        if quarters.is_empty() || best_len < cfg.min_consecutive {
            return false;
        }
        b.obs.drain(best_start + best_len..);
        b.obs.drain(..best_start);
        true
    });
    record_stage("min_consecutive_run", &blocks, prev_firms, prev_obs);

    // Stage 3: leverage bounds.
    (prev_firms, prev_obs) = (blocks.len(), count_obs(&blocks));
    let (lo, hi) = cfg.leverage_bounds;
    blocks.retain(|b| b.obs.iter().all(|o| o.y >= lo && o.y <= hi));
    record_stage("leverage_bounds", &blocks, prev_firms, prev_obs);

    // Stage 4: tail drops, percentiles pooled over the post-stage-3 sample.
    (prev_firms, prev_obs) = (blocks.len(), count_obs(&blocks));
    let mut bounds = Vec::new();
    for rule in &cfg.tail_drop {
        let pooled: Vec<f64> = blocks
            .iter()
            .flat_map(|b| b.obs.iter().map(|o| var_value(o, &rule.var)))
            .filter(|v| !v.is_nan())
            .collect();
        if pooled.is_empty() {
            continue;
        }
        let lo = rule.lower.map(|p| quantile(&pooled, p));
        let hi = rule.upper.map(|p| quantile(&pooled, p));
        bounds.push((rule.var.clone(), lo, hi));
    }
    blocks.retain(|b| {
        b.obs.iter().all(|o| {
            bounds.iter().all(|(var, lo, hi)| {
                let v = var_value(o, var);
                v.is_nan()
                    || (lo.map_or(true, |l| v >= l) && hi.map_or(true, |h| v <= h))
            })
        })
    });
    record_stage("tail_outliers", &blocks, prev_firms, prev_obs);

    // Stage 5: winsorization on the surviving pooled sample.
    (prev_firms, prev_obs) = (blocks.len(), count_obs(&blocks));
    for rule in &cfg.winsorize {
        let pooled: Vec<f64> = blocks
            .iter()
            .flat_map(|b| b.obs.iter().map(|o| var_value(o, &rule.var)))
            .filter(|v| !v.is_nan())
            .collect();
        if pooled.is_empty() {
            continue;
        }
        let lo = rule.lower.map(|p| quantile(&pooled, p));
        let hi = rule.upper.map(|p| quantile(&pooled, p));
        let idx = raw.control_index(&rule.var);
        for b in &mut blocks {
            for o in &mut b.obs {
                let v = if rule.var == "y" { &mut o.y } else { &mut o.controls[idx.unwrap()] };
                if let Some(l) = lo {
                    if *v < l {
                        *v = l;
                    }
                }
                if let Some(h) = hi {
                    if *v > h {
                        *v = h;
                    }
                }
            }
        }
    }
    record_stage("winsorize", &blocks, prev_firms, prev_obs);

    if blocks.is_empty() {
        return Err(Error::EmptySample("no firms survive the filter cascade".into()));
    }

    let surviving_yearly = yearly_firms(&blocks);
    let yearly = initial_yearly
        .iter()
        .map(|(&year, &initial)| {
            let surviving = surviving_yearly.get(&year).copied().unwrap_or(0);
            YearReport {
                year,
                initial_firms: initial,
                surviving_firms: surviving,
                pass_pct: 100.0 * surviving as f64 / initial as f64,
            }
        })
        .collect();

    let obs: Vec<Observation> = blocks.into_iter().flat_map(|b| b.obs).collect();
    let filtered = PanelDataset::from_observations(raw.control_names.clone(), obs)?;
    Ok((filtered, FilterReport { stages, yearly }))
}

fn yearly_firms(blocks: &[FirmBlock]) -> BTreeMap<i32, usize> {
    let mut by_year: BTreeMap<i32, BTreeSet<&str>> = BTreeMap::new();
    for b in blocks {
        for o in &b.obs {
            by_year.entry(o.quarter.div_euclid(4)).or_default().insert(b.firm.as_str());
        }
    }
    by_year.into_iter().map(|(y, firms)| (y, firms.len())).collect()
}

/// SIC division letter for a two-digit code prefix.
fn division(two_digit: u32) -> char {
    match two_digit {
        1..=9 => 'A',
        10..=14 => 'B',
        15..=17 => 'C',
        20..=39 => 'D',
        40..=49 => 'E',
        50..=51 => 'F',
        52..=59 => 'G',
        60..=67 => 'H',
        70..=89 => 'I',
        91..=97 => 'J',
        _ => 'K',
    }
}

/// Regroup 3-digit industry codes so that every group holds at least
/// `min_firms` firms: small codes merge into a residual per 2-digit parent,
/// and residuals still below the minimum merge into a division-level
/// residual. Merge order is by ascending code.
pub fn group_industries(ds: &PanelDataset, min_firms: usize) -> PanelDataset {
    let mut firms_by_code: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    for o in &ds.observations {
        firms_by_code.entry(o.industry_code.clone()).or_default().insert(o.firm_id.as_str());
    }

    // code -> group id, built in three passes.
    let mut group_of_code: BTreeMap<String, String> = BTreeMap::new();
    let mut residual_2d: BTreeMap<String, (BTreeSet<&str>, Vec<String>)> = BTreeMap::new();
    for (code, firms) in &firms_by_code {
        if firms.len() >= min_firms {
            group_of_code.insert(code.clone(), code.clone());
        } else {
            let parent = code.chars().take(2).collect::<String>();
            let e = residual_2d.entry(parent).or_default();
            e.0.extend(firms.iter().copied());
            e.1.push(code.clone());
        }
    }

    let mut residual_div: BTreeMap<char, (BTreeSet<&str>, Vec<String>)> = BTreeMap::new();
    for (parent, (firms, codes)) in &residual_2d {
        if firms.len() >= min_firms {
            let gid = format!("{parent}x-others");
            for code in codes {
                group_of_code.insert(code.clone(), gid.clone());
            }
        } else {
            let d2 = parent.parse::<u32>().unwrap_or(99);
            let e = residual_div.entry(division(d2)).or_default();
            e.0.extend(firms.iter().copied());
            e.1.extend(codes.iter().cloned());
        }
    }
    for (div, (_, codes)) in &residual_div {
        let gid = format!("div-{div}-others");
        for code in codes {
            group_of_code.insert(code.clone(), gid.clone());
        }
    }

    let mut out = ds.clone();
    for o in &ds.observations {
        out.industry_map.insert(o.firm_id.clone(), group_of_code[&o.industry_code].clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn obs(firm: &str, industry: &str, quarter: i32, y: f64) -> Observation {
        Observation {
            firm_id: firm.into(),
            industry_code: industry.into(),
            quarter,
            y,
            controls: vec![],
        }
    }

    #[test]
    fn load_small_panel() {
        let f = write_csv("firm,industry,quarter,y,cash\nA,283,1,0.1,0.5\nA,283,2,0.2,0.4\nA,283,3,0.3,0.3\n");
        let ds = load_panel(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.n_firms(), 1);
        assert_eq!(ds.n_obs(), 3);
        assert_eq!(ds.control_names, vec!["cash"]);
        assert_eq!(ds.time_range, (1, 3));
    }

    #[test]
    fn duplicate_firm_quarter_errors() {
        let f = write_csv("firm,industry,quarter,y\nA,283,1,0.1\nA,283,2,0.2\nA,283,2,0.3\n");
        match load_panel(f.path(), &CsvSchema::default()) {
            Err(Error::DuplicateObservation { firm, quarter }) => {
                assert_eq!(firm, "A");
                assert_eq!(quarter, 2);
            }
            other => panic!("expected duplication error, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_errors() {
        let f = write_csv("firm,quarter,y\nA,1,0.1\n");
        match load_panel(f.path(), &CsvSchema::default()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "industry"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_y_reports_row() {
        let f = write_csv("firm,industry,quarter,y\nA,283,1,0.1\nA,283,2,oops\n");
        match load_panel(f.path(), &CsvSchema::default()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn calendar_quarters() {
        assert_eq!(parse_quarter("2007Q1"), Some(8028));
        assert_eq!(parse_quarter("2007q4"), Some(8031));
        assert_eq!(parse_quarter("12"), Some(12));
        assert_eq!(parse_quarter("2007Q5"), None);
    }

    #[test]
    fn short_run_firm_dropped() {
        // Quarters {1,2,3,5,6}: longest run is 3 < 5.
        let mut all = Vec::new();
        for q in [1, 2, 3, 5, 6] {
            all.push(obs("A", "283", q, 0.2));
        }
        for q in 1..=6 {
            all.push(obs("B", "283", q, 0.3));
        }
        let ds = PanelDataset::from_observations(vec![], all).unwrap();
        let (filtered, report) = apply_filters(&ds, &FilterConfig::default()).unwrap();
        assert_eq!(filtered.n_firms(), 1);
        assert_eq!(filtered.observations[0].firm_id, "B");
        assert_eq!(report.stages[1].firms_dropped, 1);
    }

    #[test]
    fn leverage_violation_drops_firm_at_stage_3() {
        let mut all: Vec<Observation> = (1..=5).map(|q| obs("A", "283", q, 0.2)).collect();
        all[2].y = 1.2;
        all.extend((1..=5).map(|q| obs("B", "283", q, 0.3)));
        let ds = PanelDataset::from_observations(vec![], all).unwrap();
        let (filtered, report) = apply_filters(&ds, &FilterConfig::default()).unwrap();
        assert_eq!(filtered.n_firms(), 1);
        assert_eq!(report.stages[2].firms_dropped, 1);
        assert_eq!(report.stages[2].stage, "leverage_bounds");
    }

    #[test]
    fn tail_drop_uses_pooled_percentile() {
        // 1000 firms, one observation run each of value 1..=1000 in control
        // `x`. The 99.95% pooled percentile of 1..1000 interpolates to
        // 999.5005, so only the firm holding 1000 exceeds it.
        let mut all = Vec::new();
        for i in 1..=1000 {
            for q in 1..=5 {
                all.push(Observation {
                    firm_id: format!("F{i:04}"),
                    industry_code: "283".into(),
                    quarter: q,
                    y: 0.5,
                    controls: vec![i as f64],
                });
            }
        }
        let ds = PanelDataset::from_observations(vec!["x".into()], all).unwrap();
        let cfg = FilterConfig {
            tail_drop: vec![TailRule { var: "x".into(), lower: None, upper: Some(0.9995) }],
            ..FilterConfig::default()
        };
        let (filtered, report) = apply_filters(&ds, &cfg).unwrap();
        assert_eq!(report.stages[3].firms_dropped, 1);
        assert!(filtered.industry_map.keys().all(|f| f != "F1000"));
    }

    #[test]
    fn interior_gap_in_control_drops_firm() {
        let mut all: Vec<Observation> = (1..=6)
            .map(|q| Observation {
                firm_id: "A".into(),
                industry_code: "283".into(),
                quarter: q,
                y: 0.2,
                controls: vec![1.0],
            })
            .collect();
        all[3].controls[0] = f64::NAN; // hole inside the span
        all.extend((1..=6).map(|q| Observation {
            firm_id: "B".into(),
            industry_code: "283".into(),
            quarter: q,
            y: 0.2,
            controls: vec![1.0],
        }));
        let ds = PanelDataset::from_observations(vec!["x".into()], all).unwrap();
        let (filtered, report) = apply_filters(&ds, &FilterConfig::default()).unwrap();
        assert_eq!(report.stages[0].firms_dropped, 1);
        assert_eq!(filtered.n_firms(), 1);
    }

    #[test]
    fn edge_missing_is_trimmed_not_dropped() {
        let mut all: Vec<Observation> = (1..=7)
            .map(|q| Observation {
                firm_id: "A".into(),
                industry_code: "283".into(),
                quarter: q,
                y: 0.2,
                controls: vec![1.0],
            })
            .collect();
        all[0].controls[0] = f64::NAN; // leading edge, trimmed
        let ds = PanelDataset::from_observations(vec!["x".into()], all).unwrap();
        let (filtered, report) = apply_filters(&ds, &FilterConfig::default()).unwrap();
        assert_eq!(filtered.n_firms(), 1);
        assert_eq!(filtered.n_obs(), 6);
        assert_eq!(report.stages[0].obs_dropped, 1);
    }

    #[test]
    fn filters_are_idempotent() {
        let mut all = Vec::new();
        for i in 0..30 {
            for q in 1..=8 {
                all.push(Observation {
                    firm_id: format!("F{i:02}"),
                    industry_code: "283".into(),
                    quarter: q,
                    y: 0.01 * (i as f64) + 0.002 * (q as f64),
                    controls: vec![(i * 8 + q as usize) as f64],
                });
            }
        }
        let ds = PanelDataset::from_observations(vec!["x".into()], all).unwrap();
        let cfg = FilterConfig {
            tail_drop: vec![TailRule { var: "x".into(), lower: Some(0.0005), upper: Some(0.9995) }],
            winsorize: vec![TailRule { var: "x".into(), lower: Some(0.01), upper: Some(0.99) }],
            ..FilterConfig::default()
        };
        let (once, _) = apply_filters(&ds, &cfg).unwrap();
        let (twice, report) = apply_filters(&once, &cfg).unwrap();
        assert_eq!(once, twice);
        for s in &report.stages {
            assert_eq!(s.firms_dropped, 0, "stage {} dropped firms on filtered data", s.stage);
        }
    }

    #[test]
    fn empty_survivors_is_hard_error() {
        let all: Vec<Observation> = (1..=3).map(|q| obs("A", "283", q, 0.2)).collect();
        let ds = PanelDataset::from_observations(vec![], all).unwrap();
        assert!(matches!(apply_filters(&ds, &FilterConfig::default()), Err(Error::EmptySample(_))));
    }

    fn firms_dataset(spec: &[(&str, usize)]) -> PanelDataset {
        let mut all = Vec::new();
        for (code, n) in spec {
            for i in 0..*n {
                all.push(obs(&format!("{code}-{i:03}"), code, 1, 0.2));
            }
        }
        PanelDataset::from_observations(vec![], all).unwrap()
    }

    #[test]
    fn large_groups_unchanged() {
        let ds = firms_dataset(&[("283", 25), ("284", 25)]);
        let grouped = group_industries(&ds, 20);
        assert_eq!(grouped.group_of("283-000"), "283");
        assert_eq!(grouped.group_of("284-000"), "284");
    }

    #[test]
    fn small_codes_merge_into_two_digit_residual() {
        let ds = firms_dataset(&[("331", 20), ("333", 5), ("334", 5), ("335", 5), ("336", 5), ("339", 3)]);
        let grouped = group_industries(&ds, 20);
        assert_eq!(grouped.group_of("331-000"), "331");
        for code in ["333", "334", "335", "336", "339"] {
            assert_eq!(grouped.group_of(&format!("{code}-000")), "33x-others");
        }
        let firms_in_residual = grouped.industry_map.values().filter(|g| *g == "33x-others").count();
        assert_eq!(firms_in_residual, 23);
    }

    #[test]
    fn undersized_two_digit_residual_merges_to_division() {
        let ds = firms_dataset(&[("331", 7), ("333", 5)]);
        let grouped = group_industries(&ds, 20);
        for code in ["331", "333"] {
            assert_eq!(grouped.group_of(&format!("{code}-000")), "div-D-others");
        }
    }

    #[test]
    fn grouping_partitions_firms() {
        let ds = firms_dataset(&[("283", 25), ("285", 4), ("331", 7), ("401", 3), ("521", 30)]);
        let grouped = group_industries(&ds, 20);
        assert_eq!(grouped.industry_map.len(), ds.industry_map.len());
        let mut group_sizes: BTreeMap<&str, usize> = BTreeMap::new();
        for g in grouped.industry_map.values() {
            *group_sizes.entry(g).or_default() += 1;
        }
        for (g, n) in group_sizes {
            assert!(n >= 20 || g.starts_with("div-"), "group {g} has {n} firms");
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut all = Vec::new();
        for i in 0..8 {
            for q in 1..=6 {
                all.push(Observation {
                    firm_id: format!("F{i}"),
                    industry_code: "283".into(),
                    quarter: q,
                    y: 0.1 + 0.013 * (i as f64) + 1e-9 * q as f64 / 3.0,
                    controls: vec![(i + q as usize) as f64 / 7.0],
                });
            }
        }
        let ds = PanelDataset::from_observations(vec!["x".into()], all).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        write_panel(&ds, &path).unwrap();
        let loaded = load_panel(&path, &CsvSchema::default()).unwrap();
        assert_eq!(ds, loaded);
    }
}
