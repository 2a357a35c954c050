//! Least squares on the absorbed design with robust variance estimation and
//! delta-method propagation for nonlinear coefficient transforms.
//!
//! The solver is an orthogonal (QR) decomposition; normal equations are
//! never inverted directly. The degrees-of-freedom correction counts the
//! absorbed firm and quarter effects as estimated parameters.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{DesignMatrix, SpecEcho};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VcovKind {
    Classical,
    HeteroRobust,
    ClusterByFirm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub labels: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Symmetric k x k covariance of the coefficients, row-major.
    pub vcov: Vec<Vec<f64>>,
    pub vcov_kind: VcovKind,
    pub ssr: f64,
    pub nobs: usize,
    pub n_firms: usize,
    pub n_quarters: usize,
    pub dof: usize,
    #[serde(skip)]
    pub residuals: Vec<f64>,
    pub groups: BTreeMap<String, Vec<usize>>,
    pub spec_echo: SpecEcho,
}

impl FitResult {
    pub fn coefficient(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.coefficients[i])
    }

    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.coefficients.len()).map(|i| self.vcov[i][i].max(0.0).sqrt()).collect()
    }

    pub fn group(&self, name: &str) -> Result<&[usize]> {
        self.groups.get(name).map(|v| v.as_slice()).ok_or_else(|| Error::UnknownGroup(name.into()))
    }

    /// JSON with coefficients and standard errors; covariance optional.
    pub fn to_json(&self, include_vcov: bool) -> Result<String> {
        let se = self.std_errors();
        let mut coefs = serde_json::Map::new();
        for (i, label) in self.labels.iter().enumerate() {
            coefs.insert(
                label.clone(),
                serde_json::json!({ "estimate": self.coefficients[i], "std_error": se[i] }),
            );
        }
        let mut root = serde_json::json!({
            "coefficients": coefs,
            "ssr": self.ssr,
            "nobs": self.nobs,
            "n_firms": self.n_firms,
            "n_quarters": self.n_quarters,
            "dof": self.dof,
            "vcov_kind": self.vcov_kind,
            "spec": self.spec_echo,
        });
        if include_vcov {
            root["vcov"] = serde_json::json!(self.vcov);
            root["vcov_labels"] = serde_json::json!(self.labels);
        }
        Ok(serde_json::to_string_pretty(&root)?)
    }

    /// Regression table: coefficient, standard error in parentheses, stars
    /// at the 0.10 / 0.05 / 0.01 levels (normal critical values).
    pub fn to_table(&self) -> String {
        let se = self.std_errors();
        let mut out = String::new();
        let _ = writeln!(out, "{:<28} {:>14}", "", "estimate");
        let _ = writeln!(out, "{}", "-".repeat(44));
        for (i, label) in self.labels.iter().enumerate() {
            let t = if se[i] > 0.0 { self.coefficients[i].abs() / se[i] } else { f64::INFINITY };
            let stars = if t > 2.5758 {
                "***"
            } else if t > 1.9600 {
                "**"
            } else if t > 1.6449 {
                "*"
            } else {
                ""
            };
            let _ = writeln!(out, "{:<28} {:>14.4}{}", label, self.coefficients[i], stars);
            let _ = writeln!(out, "{:<28} {:>14}", "", format!("({:.4})", se[i]));
        }
        let _ = writeln!(out, "{}", "-".repeat(44));
        let _ = writeln!(out, "{:<28} {:>14}", "Observations", self.nobs);
        let _ = writeln!(out, "{:<28} {:>14}", "Firms", self.n_firms);
        let _ = writeln!(out, "{:<28} {:>14}", "Quarters", self.n_quarters);
        let _ = writeln!(out, "{:<28} {:>14.6e}", "SSR", self.ssr);
        out
    }
}

/// Identify a set of (nearly) linearly dependent columns by greedy
/// Gram-Schmidt; used only to name offenders on the rank-deficient path.
fn dependent_columns(x: &DMatrix<f64>, labels: &[String], eps: f64) -> Vec<String> {
    let n = x.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..x.ncols() {
        let mut v = DVector::from_fn(n, |i, _| x[(i, j)]);
        let orig = v.norm();
        for b in &basis {
            let proj = b.dot(&v);
            v.axpy(-proj, b, 1.0);
        }
        if v.norm() <= eps * orig.max(1e-300) {
            dependent.push(labels[j].clone());
        } else {
            let nv = v.norm();
            basis.push(v / nv);
        }
    }
    dependent
}

const RANK_EPS: f64 = 1e-10;

/// Plain least squares on raw columns: coefficients and SSR only. Shared by
/// the grid search, which does not need covariance matrices.
pub fn least_squares(columns: &[Vec<f64>], response: &[f64], labels: &[String]) -> Result<(Vec<f64>, f64)> {
    let n = response.len();
    let k = columns.len();
    let x = DMatrix::from_fn(n, k, |i, j| columns[j][i]);
    let y = DVector::from_column_slice(response);

    let qr = x.clone().qr();
    let r = qr.r();
    let max_diag = (0..k).map(|i| r[(i, i)].abs()).fold(0.0f64, f64::max);
    if k > 0 && (0..k).any(|i| r[(i, i)].abs() <= RANK_EPS * max_diag) {
        return Err(Error::RankDeficient { columns: dependent_columns(&x, labels, 1e-8) });
    }
    let qty = qr.q().transpose() * &y;
    let b = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient { columns: dependent_columns(&x, labels, 1e-8) })?;
    let e = &y - &x * &b;
    let ssr = e.dot(&e);
    Ok((b.iter().copied().collect(), ssr))
}

/// Degrees-of-freedom accounting for absorbed effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DofMode {
    /// dof = n - k - (firms - 1) - (quarters - 1), the dummy-equivalent count.
    CountAbsorbed,
    /// dof = n - k.
    ColumnsOnly,
}

/// OLS on the absorbed design with the requested covariance estimator.
pub fn fit_ols(dm: &DesignMatrix, vcov_kind: VcovKind) -> Result<FitResult> {
    fit_ols_with(dm, vcov_kind, DofMode::CountAbsorbed)
}

pub fn fit_ols_with(dm: &DesignMatrix, vcov_kind: VcovKind, dof_mode: DofMode) -> Result<FitResult> {
    if dm.absorb.is_none() {
        return Err(Error::Config("fit_ols requires an absorbed design".into()));
    }
    let n = dm.n_rows();
    let k = dm.n_cols();
    if k == 0 {
        return Err(Error::EmptySample("design has no columns".into()));
    }
    let x = DMatrix::from_fn(n, k, |i, j| dm.columns[j][i]);
    let y = DVector::from_column_slice(&dm.response);

    let qr = x.clone().qr();
    let r = qr.r();
    let max_diag = (0..k).map(|i| r[(i, i)].abs()).fold(0.0f64, f64::max);
    if (0..k).any(|i| r[(i, i)].abs() <= RANK_EPS * max_diag) {
        return Err(Error::RankDeficient { columns: dependent_columns(&x, &dm.labels, 1e-8) });
    }
    let qty = qr.q().transpose() * &y;
    let b = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient { columns: dependent_columns(&x, &dm.labels, 1e-8) })?;

    let e = &y - &x * &b;
    let ssr = e.dot(&e);

    let n_firms = dm.n_firms();
    let n_quarters = dm.n_quarters();
    let absorbed_params = match dof_mode {
        DofMode::CountAbsorbed => (n_firms.saturating_sub(1)) + (n_quarters.saturating_sub(1)),
        DofMode::ColumnsOnly => 0,
    };
    let dof = n
        .checked_sub(k + absorbed_params)
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::Config(format!(
            "insufficient degrees of freedom: n={n}, k={k}, absorbed={absorbed_params}"
        )))?;

    // (X'X)^{-1} = R^{-1} R^{-T}
    let identity = DMatrix::identity(k, k);
    let rinv = r
        .solve_upper_triangular(&identity)
        .ok_or_else(|| Error::RankDeficient { columns: dm.labels.clone() })?;
    let xtx_inv = &rinv * rinv.transpose();

    let vcov_mat = match vcov_kind {
        VcovKind::Classical => {
            let s2 = ssr / dof as f64;
            &xtx_inv * s2
        }
        VcovKind::HeteroRobust => {
            // HC1: scale the outer-product meat by n/dof.
            let mut meat = DMatrix::zeros(k, k);
            for i in 0..n {
                let xi = x.row(i);
                let w = e[i] * e[i];
                for a in 0..k {
                    for c in a..k {
                        meat[(a, c)] += w * xi[a] * xi[c];
                    }
                }
            }
            mirror(&mut meat);
            &xtx_inv * meat * &xtx_inv * (n as f64 / dof as f64)
        }
        VcovKind::ClusterByFirm => {
            let mut meat = DMatrix::zeros(k, k);
            let mut score = DVector::zeros(k);
            let mut current = dm.firm_of_row[0];
            let flush = |meat: &mut DMatrix<f64>, score: &mut DVector<f64>| {
                for a in 0..k {
                    for c in a..k {
                        meat[(a, c)] += score[a] * score[c];
                    }
                }
                score.fill(0.0);
            };
            for i in 0..n {
                if dm.firm_of_row[i] != current {
                    flush(&mut meat, &mut score);
                    current = dm.firm_of_row[i];
                }
                for a in 0..k {
                    score[a] += x[(i, a)] * e[i];
                }
            }
            flush(&mut meat, &mut score);
            mirror(&mut meat);
            let g = n_firms as f64;
            let factor = if g > 1.0 { g / (g - 1.0) * ((n - 1) as f64 / dof as f64) } else { 1.0 };
            &xtx_inv * meat * &xtx_inv * factor
        }
    };

    let vcov = (0..k).map(|i| (0..k).map(|j| vcov_mat[(i, j)]).collect()).collect();

    Ok(FitResult {
        labels: dm.labels.clone(),
        coefficients: b.iter().copied().collect(),
        vcov,
        vcov_kind,
        ssr,
        nobs: n,
        n_firms,
        n_quarters,
        dof,
        residuals: e.iter().copied().collect(),
        groups: dm.groups.clone(),
        spec_echo: dm.spec_echo.clone(),
    })
}

fn mirror(m: &mut DMatrix<f64>) {
    for a in 0..m.nrows() {
        for c in (a + 1)..m.ncols() {
            m[(c, a)] = m[(a, c)];
        }
    }
}

/// A differentiable transform of the coefficient vector.
pub trait CoefTransform {
    fn value(&self, b: &[f64]) -> Result<f64>;
    fn gradient(&self, b: &[f64]) -> Result<Vec<f64>>;
}

/// Sparse linear combination sum(w_j * b_j).
pub struct LinearCombo {
    pub terms: Vec<(usize, f64)>,
    pub n: usize,
}

impl CoefTransform for LinearCombo {
    fn value(&self, b: &[f64]) -> Result<f64> {
        Ok(self.terms.iter().map(|&(i, w)| w * b[i]).sum())
    }

    fn gradient(&self, _b: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.n];
        for &(i, w) in &self.terms {
            g[i] += w;
        }
        Ok(g)
    }
}

/// Long-run transform sum(b[num]) / (1 - sum(b[lags])).
pub struct LongRunTransform {
    pub num: Vec<usize>,
    pub lags: Vec<usize>,
    pub n: usize,
}

impl LongRunTransform {
    fn denominator(&self, b: &[f64]) -> Result<f64> {
        let lambda_sum: f64 = self.lags.iter().map(|&i| b[i]).sum();
        if lambda_sum >= 1.0 {
            return Err(Error::NonStationary { lambda_sum });
        }
        let denom = 1.0 - lambda_sum;
        if denom.abs() < 1e-14 {
            return Err(Error::Singularity("1 - sum(lambda) is zero".into()));
        }
        Ok(denom)
    }
}

impl CoefTransform for LongRunTransform {
    fn value(&self, b: &[f64]) -> Result<f64> {
        let num: f64 = self.num.iter().map(|&i| b[i]).sum();
        Ok(num / self.denominator(b)?)
    }

    fn gradient(&self, b: &[f64]) -> Result<Vec<f64>> {
        let denom = self.denominator(b)?;
        let num: f64 = self.num.iter().map(|&i| b[i]).sum();
        let mut g = vec![0.0; self.n];
        for &i in &self.num {
            g[i] += 1.0 / denom;
        }
        for &i in &self.lags {
            g[i] += num / (denom * denom);
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaResult {
    pub value: f64,
    pub std_error: f64,
}

/// Delta method: g(b) with variance grad' V grad. In debug builds the
/// analytic gradient is checked against central finite differences with
/// step 1e-6 * max(1, |b_j|).
pub fn delta_method(fit: &FitResult, g: &dyn CoefTransform) -> Result<DeltaResult> {
    let b = &fit.coefficients;
    let value = g.value(b)?;
    let grad = g.gradient(b)?;
    if grad.len() != b.len() {
        return Err(Error::Singularity("gradient dimension mismatch".into()));
    }

    #[cfg(debug_assertions)]
    verify_gradient(g, b, &grad)?;

    let mut var = 0.0;
    for (i, gi) in grad.iter().enumerate() {
        if *gi == 0.0 {
            continue;
        }
        for (j, gj) in grad.iter().enumerate() {
            if *gj == 0.0 {
                continue;
            }
            var += gi * gj * fit.vcov[i][j];
        }
    }
    Ok(DeltaResult { value, std_error: var.max(0.0).sqrt() })
}

/// Central finite-difference check of an analytic gradient; mismatches
/// beyond 1e-5 relative indicate a broken transform.
pub fn verify_gradient(g: &dyn CoefTransform, b: &[f64], analytic: &[f64]) -> Result<()> {
    let mut pt = b.to_vec();
    for j in 0..b.len() {
        let h = 1e-6 * b[j].abs().max(1.0);
        pt[j] = b[j] + h;
        let up = g.value(&pt);
        pt[j] = b[j] - h;
        let down = g.value(&pt);
        pt[j] = b[j];
        // Skip components where the perturbed point leaves the domain.
        let (up, down) = match (up, down) {
            (Ok(u), Ok(d)) => (u, d),
            _ => continue,
        };
        let fd = (up - down) / (2.0 * h);
        let denom = analytic[j].abs().max(fd.abs()).max(1.0);
        if (fd - analytic[j]).abs() / denom > 1e-5 {
            return Err(Error::Singularity(format!(
                "gradient component {j} mismatch: analytic {} vs finite-difference {fd}",
                analytic[j]
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::debt_capacity::ThresholdParams;
    use crate::design::{absorb_two_way, AbsorbIndex, ModelSpec, SpecEcho};

    fn echo() -> SpecEcho {
        SpecEcho { model: ModelSpec::default(), thresholds: ThresholdParams::single(0.5) }
    }

    /// Small unabsorbed design over an unbalanced two-firm panel.
    fn small_design(columns: Vec<Vec<f64>>, response: Vec<f64>) -> DesignMatrix {
        let n = response.len();
        let firm_of_row: Vec<u32> = (0..n).map(|i| if i < n / 2 { 0 } else { 1 }).collect();
        let quarter_of_row: Vec<i32> = (0..n).map(|i| (i % (n / 2)) as i32).collect();
        let labels = (0..columns.len()).map(|j| format!("x{j}")).collect();
        DesignMatrix {
            response,
            columns,
            labels,
            groups: BTreeMap::new(),
            firm_of_row,
            quarter_of_row,
            firm_ids: vec!["A".into(), "B".into()],
            industries: vec!["1".into()],
            spec_echo: echo(),
            absorb: None,
        }
    }

    #[test]
    fn column_equal_to_response_fits_exactly() {
        let response = vec![1.0, 2.0, 3.0, 4.0, 2.0, 4.0, 6.0, 9.0];
        let dm = small_design(vec![response.clone()], response);
        let absorbed = absorb_two_way(&dm).unwrap();
        let fit = fit_ols(&absorbed, VcovKind::Classical).unwrap();
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-10);
        assert!(fit.ssr < 1e-18);
    }

    #[test]
    fn matches_hand_solved_normal_equations() {
        // Demeaned 5-point bivariate system solved by hand:
        // x1 = [1,2,3,4,5], x2 = [1,0,2,1,3], y = 2*x1 - x2 + [0.1,-0.1,0,0.1,-0.1]
        // Normal equations on raw columns (no absorption; solve directly).
        let x1 = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let x2 = vec![1.0, 0.0, 2.0, 1.0, 3.0];
        let y: Vec<f64> = (0..5)
            .map(|i| 2.0 * x1[i] - x2[i] + [0.1, -0.1, 0.0, 0.1, -0.1][i])
            .collect();
        let labels = vec!["x1".to_string(), "x2".to_string()];
        let (b, ssr) = least_squares(&[x1.clone(), x2.clone()], &y, &labels).unwrap();
        // Hand solution: X'X = [[55, 20], [20, 15]], X'y = [[110.4],[24.9]]
        // det = 425; b1 = (15*110.4 - 20*24.9)/425; b2 = (55*24.9 - 20*110.4)/425
        let b1 = (15.0 * 110.4 - 20.0 * 24.9) / 425.0;
        let b2 = (55.0 * 24.9 - 20.0 * 110.4) / 425.0;
        assert!((b[0] - b1).abs() < 1e-12, "{} vs {}", b[0], b1);
        assert!((b[1] - b2).abs() < 1e-12);
        let e: f64 = (0..5).map(|i| (y[i] - b[0] * x1[i] - b[1] * x2[i]).powi(2)).sum();
        assert!((ssr - e).abs() < 1e-12);
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let col = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = vec![1.0, 0.0, 2.0, 1.0, 3.0, 1.5];
        let dm = small_design(vec![col.clone(), col], y);
        let absorbed = absorb_two_way(&dm).unwrap();
        match fit_ols(&absorbed, VcovKind::Classical) {
            Err(Error::RankDeficient { columns }) => assert!(!columns.is_empty()),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn residuals_orthogonal_and_ssr_consistent() {
        let n = 40;
        let c1: Vec<f64> = (0..n).map(|i| ((i * 7 % 13) as f64).sin()).collect();
        let c2: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).cos()).collect();
        let y: Vec<f64> = (0..n).map(|i| c1[i] * 1.5 - c2[i] * 0.5 + ((i * 11 % 7) as f64) * 0.01).collect();
        let dm = small_design(vec![c1.clone(), c2.clone()], y);
        let absorbed = absorb_two_way(&dm).unwrap();
        let fit = fit_ols(&absorbed, VcovKind::Classical).unwrap();
        let xnorm = |c: &Vec<f64>| c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let enorm = fit.residuals.iter().map(|v| v * v).sum::<f64>().sqrt();
        for c in &absorbed.columns {
            let dot: f64 = c.iter().zip(&fit.residuals).map(|(a, b)| a * b).sum();
            assert!(dot.abs() / (xnorm(c) * enorm).max(1e-300) < 1e-10);
        }
        assert!((fit.ssr - enorm * enorm).abs() <= 1e-12 * fit.ssr.max(1.0));
    }

    #[test]
    fn singleton_clusters_match_hetero_robust_up_to_factor() {
        // With every firm a singleton cluster the meats coincide, so the
        // covariances agree up to the small-sample factors
        // n/dof (HC1) vs G/(G-1) * (n-1)/dof with G = n.
        let n = 24usize;
        let c1: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() + 0.1).collect();
        let y: Vec<f64> = (0..n).map(|i| 0.5 * c1[i] + ((i % 5) as f64 - 2.0) * 0.03).collect();
        let dm = DesignMatrix {
            response: y,
            columns: vec![c1],
            labels: vec!["x".into()],
            groups: BTreeMap::new(),
            // Singleton firms; quarters repeat so time effects do not soak
            // up every observation.
            firm_of_row: (0..n as u32).collect(),
            quarter_of_row: (0..n as i32).map(|i| i % 4).collect(),
            firm_ids: (0..n).map(|i| format!("F{i}")).collect(),
            industries: vec!["1".into()],
            spec_echo: echo(),
            absorb: Some(crate::design::AbsorbReport {
                iterations: 1,
                max_residual: 0.0,
                dropped: vec![],
            }),
        };
        // Firm demeaning with singleton firms would zero everything; the
        // absorb report is a stand-in and dof counts columns only, which
        // makes the HC1 and singleton-cluster factors cancel exactly:
        // n/dof == G/(G-1) * (n-1)/dof with G = n.
        let hc = fit_ols_with(&dm, VcovKind::HeteroRobust, DofMode::ColumnsOnly).unwrap();
        let cl = fit_ols_with(&dm, VcovKind::ClusterByFirm, DofMode::ColumnsOnly).unwrap();
        let ratio = cl.vcov[0][0] / hc.vcov[0][0];
        assert!((ratio - 1.0).abs() < 1e-12, "ratio {ratio}");
    }

    #[test]
    fn delta_identity_reproduces_standard_error() {
        let response = vec![1.0, 2.0, 3.3, 4.0, 2.0, 4.1, 6.0, 8.0];
        let c: Vec<f64> = vec![0.5, 1.0, 2.0, 2.5, 1.0, 2.2, 3.0, 4.0];
        let dm = small_design(vec![c], response);
        let absorbed = absorb_two_way(&dm).unwrap();
        let fit = fit_ols(&absorbed, VcovKind::Classical).unwrap();
        let g = LinearCombo { terms: vec![(0, 1.0)], n: 1 };
        let d = delta_method(&fit, &g).unwrap();
        assert_eq!(d.value, fit.coefficients[0]);
        assert!((d.std_error - fit.std_errors()[0]).abs() < 1e-14);
    }

    #[test]
    fn delta_linear_sum_with_identity_vcov() {
        let fit = FitResult {
            labels: vec!["a".into(), "b".into()],
            coefficients: vec![1.0, 2.0],
            vcov: vec![vec![4.0, 0.0], vec![0.0, 4.0]],
            vcov_kind: VcovKind::Classical,
            ssr: 0.0,
            nobs: 10,
            n_firms: 2,
            n_quarters: 5,
            dof: 5,
            residuals: vec![],
            groups: BTreeMap::new(),
            spec_echo: echo(),
        };
        let g = LinearCombo { terms: vec![(0, 1.0), (1, 1.0)], n: 2 };
        let d = delta_method(&fit, &g).unwrap();
        assert_eq!(d.value, 3.0);
        // sigma * sqrt(2) with sigma = 2
        assert!((d.std_error - 2.0 * 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn delta_long_run_matches_finite_differences() {
        let fit = FitResult {
            labels: vec!["beta".into(), "lambda".into()],
            coefficients: vec![0.0088, 0.8386],
            vcov: vec![vec![0.0017f64.powi(2), 0.0], vec![0.0, 0.0050f64.powi(2)]],
            vcov_kind: VcovKind::Classical,
            ssr: 0.0,
            nobs: 100,
            n_firms: 10,
            n_quarters: 10,
            dof: 80,
            residuals: vec![],
            groups: BTreeMap::new(),
            spec_echo: echo(),
        };
        let g = LongRunTransform { num: vec![0], lags: vec![1], n: 2 };
        let d = delta_method(&fit, &g).unwrap();
        // Finite-difference variance for comparison.
        let f = |b: &[f64]| b[0] / (1.0 - b[1]);
        let b = &fit.coefficients;
        let h0 = 1e-6 * b[0].abs().max(1.0);
        let h1 = 1e-6 * b[1].abs().max(1.0);
        let g0 = (f(&[b[0] + h0, b[1]]) - f(&[b[0] - h0, b[1]])) / (2.0 * h0);
        let g1 = (f(&[b[0], b[1] + h1]) - f(&[b[0], b[1] - h1])) / (2.0 * h1);
        let var = g0 * g0 * fit.vcov[0][0] + g1 * g1 * fit.vcov[1][1];
        assert!((d.value - 0.0088 / (1.0 - 0.8386)).abs() < 1e-15);
        assert!(((d.std_error - var.sqrt()) / var.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn nonstationary_long_run_errors() {
        let g = LongRunTransform { num: vec![0], lags: vec![1], n: 2 };
        assert!(matches!(g.value(&[0.1, 1.0]), Err(Error::NonStationary { .. })));
    }

    #[test]
    fn absorbed_means_preserved_through_fit() {
        // fit on an absorbed design leaves group means of residuals ~ 0
        let response = vec![1.0, 2.0, 3.0, 4.5, 2.0, 4.0, 6.5, 8.0];
        let c: Vec<f64> = vec![0.4, 1.1, 2.0, 2.4, 1.0, 2.6, 3.0, 4.2];
        let dm = small_design(vec![c], response);
        let absorbed = absorb_two_way(&dm).unwrap();
        let fit = fit_ols(&absorbed, VcovKind::ClusterByFirm).unwrap();
        let index = AbsorbIndex::new(&absorbed.firm_of_row, &absorbed.quarter_of_row);
        for rows in &index.firm_rows {
            let mean: f64 =
                rows.iter().map(|&r| fit.residuals[r as usize]).sum::<f64>() / rows.len() as f64;
            assert!(mean.abs() < 1e-8);
        }
    }
}
