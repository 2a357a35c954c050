//! Lag-aligned regression system for threshold PanARDL / partial-adjustment
//! models, with industry interaction contrasts and two-way fixed-effect
//! absorption on unbalanced panels.
//!
//! Absorption uses alternating within-firm and within-quarter demeaning
//! iterated to convergence, which is equivalent to including full firm and
//! quarter dummy sets; the equivalence is enforced by an oracle test.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::debt_capacity::{CapacityLevel, CapacityPanel, ScaledPolicy, ThresholdParams};
use crate::error::{Error, Result};
use crate::panel_io::PanelDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dynamics {
    PanArdl,
    PartialAdjustment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdMode {
    Single,
    Two,
}

/// Observed proxy for the common factor interacted with industry loadings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FtProxy {
    /// Linear trend scaled to t/T over the sample span.
    LinearTrend,
    /// Per-quarter mean of a named panel column.
    Macro(String),
}

impl FtProxy {
    pub fn label(&self) -> String {
        match self {
            FtProxy::LinearTrend => "trend".into(),
            FtProxy::Macro(c) => c.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Distributed-lag order; the partial-adjustment model fixes p = 0 with
    /// a single lag of y.
    pub p: usize,
    pub dynamics: Dynamics,
    pub threshold_mode: ThresholdMode,
    pub ft_proxy: Vec<FtProxy>,
    pub policies: Vec<String>,
    pub controls: Vec<String>,
    /// Firms with fewer usable rows after lag alignment are dropped.
    pub min_obs_after_lags: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            p: 1,
            dynamics: Dynamics::PanArdl,
            threshold_mode: ThresholdMode::Single,
            ft_proxy: vec![FtProxy::LinearTrend],
            policies: Vec::new(),
            controls: Vec::new(),
            min_obs_after_lags: 1,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self.dynamics {
            Dynamics::PanArdl if self.p < 1 => {
                Err(Error::Config("PanARDL requires lag order p >= 1".into()))
            }
            Dynamics::PartialAdjustment if self.p != 0 => {
                Err(Error::Config("partial adjustment fixes p = 0 (with one lag of y)".into()))
            }
            _ => Ok(()),
        }
    }

    /// Number of own-history quarters a row consumes (y and control lags).
    pub fn y_lag_depth(&self) -> usize {
        match self.dynamics {
            Dynamics::PanArdl => self.p,
            Dynamics::PartialAdjustment => 1,
        }
    }

    /// Distributed-lag depth for pi, policy interactions and controls.
    pub fn dist_lags(&self) -> usize {
        self.p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecEcho {
    pub model: ModelSpec,
    pub thresholds: ThresholdParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorbReport {
    pub iterations: usize,
    pub max_residual: f64,
    pub dropped: Vec<String>,
}

/// Stacked regression system. Columns are column-major; `groups` maps named
/// column groups (lagged_y, pi_pre, policy_interactions, controls,
/// industry_interactions, plus per-policy `policy:<name>` and per-proxy
/// `industry_interactions:<proxy>` subgroups) to column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub response: Vec<f64>,
    pub columns: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    pub groups: BTreeMap<String, Vec<usize>>,
    pub firm_of_row: Vec<u32>,
    pub quarter_of_row: Vec<i32>,
    pub firm_ids: Vec<String>,
    /// Industry groups in contrast order; the last carries the implied
    /// loading -sum(others).
    pub industries: Vec<String>,
    pub spec_echo: SpecEcho,
    pub absorb: Option<AbsorbReport>,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn n_firms(&self) -> usize {
        self.firm_ids.len()
    }

    pub fn n_quarters(&self) -> usize {
        let mut q: Vec<i32> = self.quarter_of_row.clone();
        q.sort_unstable();
        q.dedup();
        q.len()
    }

    pub fn group(&self, name: &str) -> Result<&[usize]> {
        self.groups.get(name).map(|v| v.as_slice()).ok_or_else(|| Error::UnknownGroup(name.into()))
    }

    /// Dump values to CSV with 12 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["firm".to_string(), "quarter".into(), "y".into()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for r in 0..self.n_rows() {
            let mut rec = vec![
                self.firm_ids[self.firm_of_row[r] as usize].clone(),
                self.quarter_of_row[r].to_string(),
                format!("{:.11e}", self.response[r]),
            ];
            rec.extend(self.columns.iter().map(|c| format!("{:.11e}", c[r])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Row grouping by firm and by quarter, shared by the absorption sweeps.
pub struct AbsorbIndex {
    pub firm_rows: Vec<Vec<u32>>,
    pub quarter_rows: Vec<Vec<u32>>,
}

impl AbsorbIndex {
    pub fn new(firm_of_row: &[u32], quarter_of_row: &[i32]) -> Self {
        let n_firms = firm_of_row.iter().map(|&f| f as usize + 1).max().unwrap_or(0);
        let mut firm_rows = vec![Vec::new(); n_firms];
        for (r, &f) in firm_of_row.iter().enumerate() {
            firm_rows[f as usize].push(r as u32);
        }
        let mut quarters: Vec<i32> = quarter_of_row.to_vec();
        quarters.sort_unstable();
        quarters.dedup();
        let qpos: BTreeMap<i32, usize> = quarters.iter().enumerate().map(|(i, &q)| (q, i)).collect();
        let mut quarter_rows = vec![Vec::new(); quarters.len()];
        for (r, &q) in quarter_of_row.iter().enumerate() {
            quarter_rows[qpos[&q]].push(r as u32);
        }
        AbsorbIndex { firm_rows, quarter_rows }
    }
}

/// Demean one column in place by alternating firm and quarter projections.
/// Returns (iterations, final residual). Deterministic for a fixed row
/// order regardless of caller-side parallelism.
pub fn absorb_column(
    values: &mut [f64],
    index: &AbsorbIndex,
    tol: f64,
    max_iter: usize,
) -> Result<(usize, f64)> {
    let mut delta = f64::INFINITY;
    for iter in 1..=max_iter {
        delta = 0.0f64;
        for rows in index.firm_rows.iter().chain(index.quarter_rows.iter()) {
            if rows.is_empty() {
                continue;
            }
            let mean = rows.iter().map(|&r| values[r as usize]).sum::<f64>() / rows.len() as f64;
            delta = delta.max(mean.abs());
            for &r in rows {
                values[r as usize] -= mean;
            }
        }
        if delta <= tol {
            return Ok((iter, delta));
        }
    }
    Err(Error::AbsorptionNonConvergence { iterations: max_iter, residual: delta })
}

pub const ABSORB_TOL: f64 = 1e-10;
pub const ABSORB_MAX_ITER: usize = 10_000;
const COLLINEAR_NORM_RATIO: f64 = 1e-10;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Absorb firm and quarter effects from the response and every regressor
/// column. Columns whose post-absorption norm collapses below 1e-10 of the
/// pre-absorption norm are dropped and recorded in the report.
pub fn absorb_two_way(dm: &DesignMatrix) -> Result<DesignMatrix> {
    absorb_two_way_with(dm, ABSORB_TOL, ABSORB_MAX_ITER)
}

pub fn absorb_two_way_with(dm: &DesignMatrix, tol: f64, max_iter: usize) -> Result<DesignMatrix> {
    let index = AbsorbIndex::new(&dm.firm_of_row, &dm.quarter_of_row);

    let mut response = dm.response.clone();
    let (resp_iters, resp_resid) = absorb_column(&mut response, &index, tol, max_iter)?;

    struct ColOut {
        values: Vec<f64>,
        iterations: usize,
        residual: f64,
        kept: bool,
    }
    let outs: Vec<ColOut> = dm
        .columns
        .par_iter()
        .map(|col| {
            let pre = norm(col);
            let mut values = col.clone();
            let (iterations, residual) = absorb_column(&mut values, &index, tol, max_iter)?;
            let kept = pre > 0.0 && norm(&values) >= COLLINEAR_NORM_RATIO * pre;
            Ok(ColOut { values, iterations, residual, kept })
        })
        .collect::<Result<_>>()?;

    let iterations = outs.iter().map(|o| o.iterations).fold(resp_iters, usize::max);
    let max_residual = outs.iter().map(|o| o.residual).fold(resp_resid, f64::max);

    let mut columns = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = Vec::new();
    let mut remap: Vec<Option<usize>> = Vec::with_capacity(outs.len());
    for (i, out) in outs.into_iter().enumerate() {
        if out.kept {
            remap.push(Some(columns.len()));
            columns.push(out.values);
            labels.push(dm.labels[i].clone());
        } else {
            remap.push(None);
            dropped.push(dm.labels[i].clone());
        }
    }
    let groups = dm
        .groups
        .iter()
        .map(|(name, idx)| {
            (name.clone(), idx.iter().filter_map(|&i| remap[i]).collect::<Vec<usize>>())
        })
        .collect();

    Ok(DesignMatrix {
        response,
        columns,
        labels,
        groups,
        firm_of_row: dm.firm_of_row.clone(),
        quarter_of_row: dm.quarter_of_row.clone(),
        firm_ids: dm.firm_ids.clone(),
        industries: dm.industries.clone(),
        spec_echo: dm.spec_echo.clone(),
        absorb: Some(AbsorbReport { iterations, max_residual, dropped }),
    })
}

/// Industry groups present in a dataset, ascending.
pub fn industry_groups(ds: &PanelDataset) -> Vec<String> {
    let mut groups: Vec<String> = ds.industry_map.values().cloned().collect();
    groups.sort();
    groups.dedup();
    groups
}

/// Dense pi lookup aligned with a `DesignBase`'s industry ordering.
pub struct DensePi {
    values: Vec<f64>,
    q_min: i32,
    span: usize,
}

impl DensePi {
    fn new(cap: &CapacityPanel, industries: &[String], q_min: i32, q_max: i32) -> Self {
        let span = (q_max - q_min + 1).max(0) as usize;
        let pos: BTreeMap<&str, usize> =
            industries.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut values = vec![f64::NAN; span * industries.len()];
        for ((s, t), v) in &cap.pi {
            if let Some(&i) = pos.get(s.as_str()) {
                if *t >= q_min && *t <= q_max {
                    values[i * span + (*t - q_min) as usize] = *v;
                }
            }
        }
        DensePi { values, q_min, span }
    }

    #[inline]
    fn get(&self, industry: u32, t: i32) -> f64 {
        let off = t - self.q_min;
        if off < 0 || off as usize >= self.span {
            return f64::NAN;
        }
        self.values[industry as usize * self.span + off as usize]
    }
}

/// gamma-independent design skeleton: the row set, base columns, and lookup
/// metadata needed to fill threshold-dependent columns for any capacity
/// panel. The usable row set does not depend on gamma because pi(s, t) is
/// defined exactly where industry s is observed at t.
pub struct DesignBase {
    pub firm_of_row: Vec<u32>,
    pub quarter_of_row: Vec<i32>,
    pub industry_of_row: Vec<u32>,
    pub firm_ids: Vec<String>,
    pub industries: Vec<String>,
    pub response: Vec<f64>,
    base_columns: Vec<Vec<f64>>,
    base_labels: Vec<String>,
    base_groups: BTreeMap<String, Vec<usize>>,
    /// q_{t-l} per policy per lag, aligned with rows.
    policy_lag_values: Vec<Vec<Vec<f64>>>,
    policy_names: Vec<String>,
    pub spec: ModelSpec,
    q_lookup_range: (i32, i32),
}

impl DesignBase {
    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn dense_pi(&self, cap: &CapacityPanel) -> DensePi {
        DensePi::new(cap, &self.industries, self.q_lookup_range.0, self.q_lookup_range.1)
    }

    /// pi_pre block: pi(s, t-1-l) for l = 0..=p, one column per lag.
    pub fn fill_pre_columns(&self, pi: &DensePi) -> Result<Vec<Vec<f64>>> {
        let lags = self.spec.dist_lags() + 1;
        let mut cols = vec![vec![0.0; self.n_rows()]; lags];
        for r in 0..self.n_rows() {
            let s = self.industry_of_row[r];
            let t = self.quarter_of_row[r];
            for (l, col) in cols.iter_mut().enumerate() {
                let v = pi.get(s, t - 1 - l as i32);
                if v.is_nan() {
                    return Err(Error::MissingPeriod {
                        quarter: t - 1 - l as i32,
                        industry: Some(self.industries[s as usize].clone()),
                    });
                }
                col[r] = v;
            }
        }
        Ok(cols)
    }

    /// Interaction block: q_{t-l} * pi(s, t-l-1) for each policy and lag.
    pub fn fill_interaction_columns(&self, pi: &DensePi) -> Result<Vec<Vec<f64>>> {
        let lags = self.spec.dist_lags() + 1;
        let mut cols = Vec::with_capacity(lags * self.policy_names.len());
        for qv in &self.policy_lag_values {
            for (l, ql) in qv.iter().enumerate() {
                let mut col = vec![0.0; self.n_rows()];
                for r in 0..self.n_rows() {
                    let s = self.industry_of_row[r];
                    let tau = self.quarter_of_row[r] - 1 - l as i32;
                    let v = pi.get(s, tau);
                    if v.is_nan() {
                        return Err(Error::MissingPeriod {
                            quarter: tau,
                            industry: Some(self.industries[s as usize].clone()),
                        });
                    }
                    col[r] = ql[r] * v;
                }
                cols.push(col);
            }
        }
        Ok(cols)
    }

    /// Assemble the full design for a capacity-panel pair.
    pub fn assemble(&self, cap_pre: &CapacityPanel, cap_post: &CapacityPanel) -> Result<DesignMatrix> {
        let pre = self.fill_pre_columns(&self.dense_pi(cap_pre))?;
        let inter = self.fill_interaction_columns(&self.dense_pi(cap_post))?;
        let thresholds = ThresholdParams { gamma_pre: cap_pre.gamma, gamma_post: cap_post.gamma };
        Ok(self.assemble_from_blocks(pre, inter, thresholds))
    }

    /// Build a DesignMatrix from prefilled gamma blocks (used by the grid
    /// search, which caches absorbed blocks per gamma).
    pub fn assemble_from_blocks(
        &self,
        pre: Vec<Vec<f64>>,
        inter: Vec<Vec<f64>>,
        thresholds: ThresholdParams,
    ) -> DesignMatrix {
        let lags = self.spec.dist_lags() + 1;
        let mut columns = self.base_columns.clone();
        let mut labels = self.base_labels.clone();
        let mut groups = self.base_groups.clone();

        let pre_start = columns.len();
        for (l, col) in pre.into_iter().enumerate() {
            columns.push(col);
            labels.push(format!("pi_pre_lag{}", l + 1));
        }
        groups.insert("pi_pre".into(), (pre_start..pre_start + lags).collect());

        let inter_start = columns.len();
        for (p_idx, name) in self.policy_names.iter().enumerate() {
            let start = inter_start + p_idx * lags;
            for l in 0..lags {
                columns.push(inter[p_idx * lags + l].clone());
                labels.push(format!("{name}_x_pi_post_lag{l}"));
            }
            groups.insert(format!("policy:{name}"), (start..start + lags).collect());
        }
        groups.insert(
            "policy_interactions".into(),
            (inter_start..inter_start + lags * self.policy_names.len()).collect(),
        );

        DesignMatrix {
            response: self.response.clone(),
            columns,
            labels,
            groups,
            firm_of_row: self.firm_of_row.clone(),
            quarter_of_row: self.quarter_of_row.clone(),
            firm_ids: self.firm_ids.clone(),
            industries: self.industries.clone(),
            spec_echo: SpecEcho { model: self.spec.clone(), thresholds },
            absorb: None,
        }
    }
}

/// Build the gamma-independent skeleton: usable rows, y lags, control lags,
/// policy lag values, and industry-contrast interaction columns.
pub fn build_base(
    ds: &PanelDataset,
    policies: &[ScaledPolicy],
    spec: &ModelSpec,
) -> Result<DesignBase> {
    spec.validate()?;

    let policy_refs: Vec<&ScaledPolicy> = spec
        .policies
        .iter()
        .map(|name| {
            policies
                .iter()
                .find(|p| &p.name == name)
                .ok_or_else(|| Error::Config(format!("policy series `{name}` not provided")))
        })
        .collect::<Result<_>>()?;

    let control_idx: Vec<usize> = spec
        .controls
        .iter()
        .map(|c| ds.control_index(c).ok_or_else(|| Error::MissingColumn(c.clone())))
        .collect::<Result<_>>()?;

    let industries = industry_groups(ds);
    let industry_pos: BTreeMap<&str, u32> =
        industries.iter().enumerate().map(|(i, s)| (s.as_str(), i as u32)).collect();

    // Industry-quarter support for pi lookups.
    let mut pi_support: BTreeSet<(u32, i32)> = BTreeSet::new();
    for o in &ds.observations {
        pi_support.insert((industry_pos[ds.group_of(&o.firm_id)], o.quarter));
    }

    // Macro proxies: per-quarter means of the named column.
    let mut macro_series: BTreeMap<String, BTreeMap<i32, f64>> = BTreeMap::new();
    for proxy in &spec.ft_proxy {
        if let FtProxy::Macro(col) = proxy {
            let idx = ds.control_index(col).ok_or_else(|| Error::MissingColumn(col.clone()))?;
            let mut sums: BTreeMap<i32, (f64, usize)> = BTreeMap::new();
            for o in &ds.observations {
                let v = o.controls[idx];
                if !v.is_nan() {
                    let e = sums.entry(o.quarter).or_default();
                    e.0 += v;
                    e.1 += 1;
                }
            }
            macro_series.insert(
                col.clone(),
                sums.into_iter().map(|(q, (s, n))| (q, s / n as f64)).collect(),
            );
        }
    }
    let (t_min, t_max) = ds.time_range;
    let span = (t_max - t_min + 1) as f64;
    let f_value = |proxy: &FtProxy, t: i32| -> Option<f64> {
        match proxy {
            FtProxy::LinearTrend => Some((t - t_min + 1) as f64 / span),
            FtProxy::Macro(col) => macro_series[col].get(&t).copied(),
        }
    };

    let y_depth = spec.y_lag_depth();
    let dist = spec.dist_lags();
    let spans = ds.firm_spans();

    let mut firm_ids = Vec::new();
    let mut firm_of_row = Vec::new();
    let mut quarter_of_row = Vec::new();
    let mut industry_of_row = Vec::new();
    let mut response = Vec::new();
    let mut row_obs: Vec<usize> = Vec::new(); // observation index at time t
    let mut lag_obs: Vec<Vec<usize>> = Vec::new(); // own history t-1..t-depth

    let max_own_lag = y_depth.max(dist);
    for (firm, range) in &spans {
        let obs = &ds.observations[range.clone()];
        let by_quarter: BTreeMap<i32, usize> =
            obs.iter().enumerate().map(|(i, o)| (o.quarter, range.start + i)).collect();
        let industry = industry_pos[ds.group_of(firm)];
        let mut rows_here = Vec::new();
        for o in obs {
            let t = o.quarter;
            if o.y.is_nan() {
                continue;
            }
            let mut own = Vec::with_capacity(max_own_lag);
            let mut ok = true;
            for l in 1..=max_own_lag {
                match by_quarter.get(&(t - l as i32)) {
                    Some(&i) if !ds.observations[i].y.is_nan() => own.push(i),
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            for l in 0..=dist {
                if !pi_support.contains(&(industry, t - 1 - l as i32)) {
                    ok = false;
                    break;
                }
            }
            if !ok {
                continue;
            }
            if control_idx.iter().any(|&c| o.controls[c].is_nan()) {
                continue;
            }
            if spec.ft_proxy.iter().any(|p| f_value(p, t).is_none()) {
                continue;
            }
            if own
                .iter()
                .take(dist)
                .any(|&i| control_idx.iter().any(|&c| ds.observations[i].controls[c].is_nan()))
            {
                continue;
            }
            rows_here.push((by_quarter[&t], own));
        }
        if rows_here.is_empty() || rows_here.len() < spec.min_obs_after_lags {
            continue;
        }
        let firm_idx = firm_ids.len() as u32;
        firm_ids.push(firm.clone());
        for (obs_i, own) in rows_here {
            let o = &ds.observations[obs_i];
            firm_of_row.push(firm_idx);
            quarter_of_row.push(o.quarter);
            industry_of_row.push(industry);
            response.push(o.y);
            row_obs.push(obs_i);
            lag_obs.push(own);
        }
    }

    if response.is_empty() {
        return Err(Error::EmptySample("no usable rows after lag alignment".into()));
    }

    let n = response.len();
    let mut base_columns = Vec::new();
    let mut base_labels = Vec::new();
    let mut base_groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();

    for l in 1..=y_depth {
        let col: Vec<f64> = (0..n).map(|r| ds.observations[lag_obs[r][l - 1]].y).collect();
        base_columns.push(col);
        base_labels.push(format!("y_lag{l}"));
    }
    base_groups.insert("lagged_y".into(), (0..y_depth).collect());

    let controls_start = base_columns.len();
    for (c_pos, &c) in control_idx.iter().enumerate() {
        for l in 0..=dist {
            let col: Vec<f64> = (0..n)
                .map(|r| {
                    let i = if l == 0 { row_obs[r] } else { lag_obs[r][l - 1] };
                    ds.observations[i].controls[c]
                })
                .collect();
            base_columns.push(col);
            base_labels.push(format!("{}_lag{l}", spec.controls[c_pos]));
        }
    }
    base_groups.insert("controls".into(), (controls_start..base_columns.len()).collect());

    // Sum-to-zero contrasts: S-1 columns per proxy, industry j against the
    // last industry.
    let inter_start = base_columns.len();
    let s_count = industries.len();
    for proxy in &spec.ft_proxy {
        let proxy_start = base_columns.len();
        for j in 0..s_count.saturating_sub(1) {
            let col: Vec<f64> = (0..n)
                .map(|r| {
                    let s = industry_of_row[r] as usize;
                    let c = if s == j {
                        1.0
                    } else if s == s_count - 1 {
                        -1.0
                    } else {
                        0.0
                    };
                    c * f_value(proxy, quarter_of_row[r]).unwrap()
                })
                .collect();
            base_columns.push(col);
            base_labels.push(format!("phi_{}_x_{}", industries[j], proxy.label()));
        }
        base_groups.insert(
            format!("industry_interactions:{}", proxy.label()),
            (proxy_start..base_columns.len()).collect(),
        );
    }
    base_groups.insert("industry_interactions".into(), (inter_start..base_columns.len()).collect());

    let lags = dist + 1;
    let policy_lag_values: Vec<Vec<Vec<f64>>> = policy_refs
        .iter()
        .map(|q| {
            (0..lags)
                .map(|l| (0..n).map(|r| q.value(quarter_of_row[r] - l as i32)).collect())
                .collect()
        })
        .collect();

    let q_lookup_range = (
        quarter_of_row.iter().min().copied().unwrap_or(0) - 1 - dist as i32,
        quarter_of_row.iter().max().copied().unwrap_or(0),
    );

    Ok(DesignBase {
        firm_of_row,
        quarter_of_row,
        industry_of_row,
        firm_ids,
        industries,
        response,
        base_columns,
        base_labels,
        base_groups,
        policy_lag_values,
        policy_names: spec.policies.clone(),
        spec: spec.clone(),
        q_lookup_range,
    })
}

/// Build the stacked, lag-aligned design for one capacity-panel pair.
pub fn build_design(
    ds: &PanelDataset,
    cap_pre: &CapacityPanel,
    cap_post: &CapacityPanel,
    policies: &[ScaledPolicy],
    spec: &ModelSpec,
) -> Result<DesignMatrix> {
    for cap in [cap_pre, cap_post] {
        if cap.level != CapacityLevel::Industry {
            return Err(Error::Config("design requires industry-level capacity panels".into()));
        }
    }
    if spec.threshold_mode == ThresholdMode::Single && cap_pre.gamma != cap_post.gamma {
        return Err(Error::Config(format!(
            "single-threshold mode with distinct quantiles {} and {}",
            cap_pre.gamma, cap_post.gamma
        )));
    }
    let base = build_base(ds, policies, spec)?;
    base.assemble(cap_pre, cap_post)
}

/// Recover industry loadings from contrast-coded coefficients for one proxy;
/// the omitted industry carries -sum(others) so loadings sum to zero.
pub fn recover_industry_loadings(
    labels: &[String],
    coefficients: &[f64],
    industries: &[String],
    proxy: &FtProxy,
) -> Vec<(String, f64)> {
    let tag = format!("_x_{}", proxy.label());
    let mut out = Vec::new();
    let mut total = 0.0;
    for industry in &industries[..industries.len().saturating_sub(1)] {
        let label = format!("phi_{industry}{tag}");
        if let Some(i) = labels.iter().position(|l| *l == label) {
            out.push((industry.clone(), coefficients[i]));
            total += coefficients[i];
        }
    }
    if let Some(last) = industries.last() {
        out.push((last.clone(), -total));
    }
    out
}
