//! OLS with absorbed household effects, year dummies and household-clustered
//! (CR1) standard errors for the six model specifications.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};
use thiserror::Error;

use crate::metrics::MetricId;
use crate::survey::{ihs, weather_regressor, MergedPanel, Outcome, CONTROL_NAMES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EconError {
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("metric {0} is missing for every observation")]
    AllMissingMetric(String),
    #[error("no observations")]
    EmptyPanel,
    #[error("no household has two or more observations")]
    NoVariation,
    #[error("design is rank deficient: column {name} is collinear with earlier columns")]
    RankDeficient { column: usize, name: String },
    #[error("need at least 2 clusters, got {0}")]
    TooFewClusters(usize),
    #[error("degenerate degrees of freedom: n = {n}, k = {k}")]
    DegenerateDof { n: usize, k: usize },
}

impl EconError {
    /// Short status code for result tables.
    pub fn code(&self) -> &'static str {
        match self {
            EconError::MissingColumn(_) => "MissingColumn",
            EconError::AllMissingMetric(_) => "AllMissingMetric",
            EconError::EmptyPanel => "EmptyPanel",
            EconError::NoVariation => "NoVariation",
            EconError::RankDeficient { .. } => "RankDeficient",
            EconError::TooFewClusters(_) => "TooFewClusters",
            EconError::DegenerateDof { .. } => "DegenerateDof",
        }
    }
}

pub type Result<T> = std::result::Result<T, EconError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Form {
    Linear,
    Quadratic,
}

/// The six canonical models: {linear, quadratic} x {pooled, household and
/// year effects, effects plus input controls}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpecKind {
    LinearPooled,
    LinearFe,
    LinearFeControls,
    QuadraticPooled,
    QuadraticFe,
    QuadraticFeControls,
}

impl SpecKind {
    pub const ALL: [SpecKind; 6] = [
        SpecKind::LinearPooled,
        SpecKind::LinearFe,
        SpecKind::LinearFeControls,
        SpecKind::QuadraticPooled,
        SpecKind::QuadraticFe,
        SpecKind::QuadraticFeControls,
    ];

    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_number(n: u8) -> Option<Self> {
        (1..=6).contains(&n).then(|| Self::ALL[n as usize - 1])
    }

    pub fn form(self) -> Form {
        if (self as u8) < 3 {
            Form::Linear
        } else {
            Form::Quadratic
        }
    }

    pub fn fixed_effects(self) -> bool {
        !matches!(self, SpecKind::LinearPooled | SpecKind::QuadraticPooled)
    }

    pub fn controls(self) -> bool {
        matches!(self, SpecKind::LinearFeControls | SpecKind::QuadraticFeControls)
    }

    /// Model variant name shared by the linear and quadratic forms.
    pub fn variant(self) -> &'static str {
        match (self.fixed_effects(), self.controls()) {
            (false, _) => "pooled",
            (true, false) => "fe",
            (true, true) => "fe_controls",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SpecKind::LinearPooled => "linear_pooled",
            SpecKind::LinearFe => "linear_fe",
            SpecKind::LinearFeControls => "linear_fe_controls",
            SpecKind::QuadraticPooled => "quadratic_pooled",
            SpecKind::QuadraticFe => "quadratic_fe",
            SpecKind::QuadraticFeControls => "quadratic_fe_controls",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Ok(n) = s.parse::<u8>() {
            return Self::from_number(n);
        }
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for SpecKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub form: Form,
    pub fixed_effects: bool,
    pub controls: bool,
    /// One metric, or several for a rain+temperature combination.
    pub weather: Vec<MetricId>,
}

impl RegressionSpec {
    pub fn canonical(kind: SpecKind, weather: Vec<MetricId>) -> Self {
        Self { form: kind.form(), fixed_effects: kind.fixed_effects(), controls: kind.controls(), weather }
    }
}

/// Response, regressors and grouping ready for estimation.
#[derive(Debug, Clone)]
pub struct Design {
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    /// Columns of `x` holding weather terms.
    pub weather_cols: Vec<usize>,
    /// Household index of every row; used both for absorption and clustering.
    pub households: Vec<usize>,
    pub absorb_households: bool,
}

/// Assemble the design for `spec` on `panel`, whose metric columns must be
/// `spec.weather` in order.
pub fn build_design(panel: &MergedPanel, outcome: Outcome, spec: &RegressionSpec) -> Result<Design> {
    for m in &spec.weather {
        if !panel.columns.iter().any(|c| c.metric == *m) {
            return Err(EconError::MissingColumn(m.to_string()));
        }
    }
    if let Some(c) = panel.all_missing.first() {
        return Err(EconError::AllMissingMetric(c.label()));
    }
    let n = panel.n_rows();
    if n == 0 {
        return Err(EconError::EmptyPanel);
    }
    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut weather_cols = Vec::new();
    if !spec.fixed_effects {
        names.push("const".to_string());
        cols.push(vec![1.0; n]);
    }
    for m in &spec.weather {
        let idx = panel.columns.iter().position(|c| c.metric == *m).expect("checked above");
        let w: Vec<f64> = panel.values[idx].iter().map(|v| weather_regressor(*m, *v)).collect();
        weather_cols.push(cols.len());
        names.push(m.to_string());
        if spec.form == Form::Quadratic {
            let sq = w.iter().map(|v| v * v).collect();
            cols.push(w);
            weather_cols.push(cols.len());
            names.push(format!("{m}^2"));
            cols.push(sq);
        } else {
            cols.push(w);
        }
    }
    if spec.controls {
        let ctrl: Vec<[f64; 6]> = panel.rows.iter().map(|r| r.controls()).collect();
        for (j, name) in CONTROL_NAMES.iter().enumerate() {
            names.push(name.to_string());
            cols.push(ctrl.iter().map(|c| c[j]).collect());
        }
    }
    if spec.fixed_effects {
        let years: BTreeSet<i32> = panel.rows.iter().map(|r| r.year).collect();
        for y in years.iter().skip(1) {
            names.push(format!("year_{y}"));
            cols.push(panel.rows.iter().map(|r| f64::from(u8::from(r.year == *y))).collect());
        }
    }
    let mut hh_index = BTreeMap::new();
    let households = panel
        .rows
        .iter()
        .map(|r| {
            let next = hh_index.len();
            *hh_index.entry((r.country.as_str(), r.hh_id.as_str())).or_insert(next)
        })
        .collect();
    let y = panel.rows.iter().map(|r| ihs(r.outcome(outcome))).collect();
    let x = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    Ok(Design { y, x, names, weather_cols, households, absorb_households: spec.fixed_effects })
}

/// Group-demeaned data with singleton groups removed.
#[derive(Debug, Clone)]
pub struct Within {
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
    /// Rows of the input kept (non-singleton groups), in input order.
    pub kept: Vec<usize>,
    /// Number of absorbed group effects.
    pub absorbed: usize,
    pub singletons_dropped: usize,
}

pub fn within_transform(y: &[f64], x: &DMatrix<f64>, groups: &[usize]) -> Result<Within> {
    let mut count: BTreeMap<usize, usize> = BTreeMap::new();
    for g in groups {
        *count.entry(*g).or_default() += 1;
    }
    let kept: Vec<usize> = (0..y.len()).filter(|&i| count[&groups[i]] >= 2).collect();
    if kept.is_empty() {
        return Err(EconError::NoVariation);
    }
    let singletons_dropped = count.values().filter(|c| **c == 1).count();
    let absorbed = count.len() - singletons_dropped;
    let k = x.ncols();
    // group sums over kept rows
    let mut sums: BTreeMap<usize, (usize, f64, Vec<f64>)> = BTreeMap::new();
    for &i in &kept {
        let e = sums.entry(groups[i]).or_insert_with(|| (0, 0.0, vec![0.0; k]));
        e.0 += 1;
        e.1 += y[i];
        for j in 0..k {
            e.2[j] += x[(i, j)];
        }
    }
    let yt = kept
        .iter()
        .map(|&i| {
            let s = &sums[&groups[i]];
            y[i] - s.1 / s.0 as f64
        })
        .collect();
    let xt = DMatrix::from_fn(kept.len(), k, |r, j| {
        let i = kept[r];
        let s = &sums[&groups[i]];
        x[(i, j)] - s.2[j] / s.0 as f64
    });
    Ok(Within { y: yt, x: xt, kept, absorbed, singletons_dropped })
}

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub beta: Vec<f64>,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    /// `(X'X)^-1` from the triangular factor.
    pub xtx_inv: DMatrix<f64>,
}

/// Relative size below which a column's component orthogonal to earlier
/// columns counts as zero.
const RANK_TOL: f64 = 1e-9;

/// Least squares by Householder QR. Fails with the first column that is
/// (numerically) a combination of the columns before it.
pub fn ols_fit(y: &[f64], x: &DMatrix<f64>) -> Result<OlsFit> {
    let (n, k) = x.shape();
    if n == 0 {
        return Err(EconError::EmptyPanel);
    }
    if k == 0 {
        return Ok(OlsFit { beta: vec![], residuals: y.to_vec(), fitted: vec![0.0; n], xtx_inv: DMatrix::zeros(0, 0) });
    }
    if n < k {
        return Err(EconError::DegenerateDof { n, k });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    for j in 0..k {
        let norm = x.column(j).norm();
        if norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * norm {
            return Err(EconError::RankDeficient { column: j, name: format!("x{j}") });
        }
    }
    let q = qr.q();
    let yv = DVector::from_column_slice(y);
    let qty = q.transpose() * &yv;
    let beta = r.solve_upper_triangular(&qty).expect("non-singular after rank check");
    let rinv = r.solve_upper_triangular(&DMatrix::identity(k, k)).expect("non-singular after rank check");
    let xtx_inv = &rinv * rinv.transpose();
    let fitted = x * &beta;
    let residuals = (&yv - &fitted).iter().copied().collect();
    Ok(OlsFit { beta: beta.iter().copied().collect(), residuals, fitted: fitted.iter().copied().collect(), xtx_inv })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DofParams {
    /// Observations.
    pub n: usize,
    /// Estimated coefficients (absorbed effects excluded).
    pub k: usize,
}

/// CR1 sandwich `c (X'X)^-1 (sum_g X_g' u_g u_g' X_g) (X'X)^-1` with
/// `c = G/(G-1) * (N-1)/(N-K)`.
pub fn cluster_robust_vcov(x: &DMatrix<f64>, residuals: &[f64], clusters: &[usize], dof: DofParams) -> Result<DMatrix<f64>> {
    let xtx = x.transpose() * x;
    let bread = xtx.try_inverse().ok_or(EconError::RankDeficient { column: 0, name: "X'X".into() })?;
    sandwich(&bread, x, residuals, clusters, dof)
}

fn sandwich(bread: &DMatrix<f64>, x: &DMatrix<f64>, residuals: &[f64], clusters: &[usize], dof: DofParams) -> Result<DMatrix<f64>> {
    let k = x.ncols();
    let mut scores: BTreeMap<usize, DVector<f64>> = BTreeMap::new();
    for (i, &g) in clusters.iter().enumerate() {
        let s = scores.entry(g).or_insert_with(|| DVector::zeros(k));
        for j in 0..k {
            s[j] += x[(i, j)] * residuals[i];
        }
    }
    let g = scores.len();
    if g < 2 {
        return Err(EconError::TooFewClusters(g));
    }
    if dof.n <= dof.k {
        return Err(EconError::DegenerateDof { n: dof.n, k: dof.k });
    }
    let mut meat = DMatrix::zeros(k, k);
    for s in scores.values() {
        meat += s * s.transpose();
    }
    let c = (g as f64 / (g as f64 - 1.0)) * ((dof.n as f64 - 1.0) / (dof.n as f64 - dof.k as f64));
    let v = bread * meat * bread * c;
    // symmetrise away rounding
    Ok((&v + v.transpose()) * 0.5)
}

/// Two-sided p-value of `t` under Student's t with `dof` degrees of freedom.
pub fn t_pvalue(t: f64, dof: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, dof).expect("dof > 0");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

/// `(1 + level) / 2` quantile of Student's t.
pub fn t_critical(level: f64, dof: f64) -> f64 {
    StudentsT::new(0.0, 1.0, dof).expect("dof > 0").inverse_cdf(0.5 + level / 2.0)
}

/// Wald test of `beta[idx] = 0` with an F(q, dof) reference.
pub fn wald_pvalue(beta: &[f64], vcov: &DMatrix<f64>, idx: &[usize], dof: f64) -> f64 {
    let q = idx.len();
    if q == 0 {
        return f64::NAN;
    }
    let b = DVector::from_iterator(q, idx.iter().map(|&i| beta[i]));
    let v = DMatrix::from_fn(q, q, |a, c| vcov[(idx[a], idx[c])]);
    let Some(vinv) = v.try_inverse() else {
        return f64::NAN;
    };
    let w = (b.transpose() * vinv * &b)[(0, 0)];
    if !w.is_finite() || w < 0.0 {
        return f64::NAN;
    }
    let f = FisherSnedecor::new(q as f64, dof).expect("positive dof");
    f.sf(w / q as f64).clamp(0.0, 1.0)
}

/// Everything kept from one estimation.
#[derive(Debug, Clone)]
pub struct RegressionFit {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub vcov: DMatrix<f64>,
    pub weather_cols: Vec<usize>,
    /// Joint Wald p-value over all weather terms (equals the single t-test
    /// p-value when there is one term).
    pub p_joint: f64,
    pub r2: f64,
    pub adj_r2: f64,
    pub n: usize,
    pub g: usize,
    pub absorbed: usize,
    pub singletons_dropped: usize,
    pub residuals: Vec<f64>,
}

impl RegressionFit {
    /// Degrees of freedom of the clustered t tests.
    pub fn dof(&self) -> f64 {
        self.g as f64 - 1.0
    }

    /// Symmetric `level` confidence interval of coefficient `j`.
    pub fn ci(&self, j: usize, level: f64) -> (f64, f64) {
        let h = t_critical(level, self.dof()) * self.se[j];
        (self.coef[j] - h, self.coef[j] + h)
    }
}

/// p-values, joint weather test and adjusted R^2 given a finished OLS.
/// `y_raw` is the response before demeaning (for the total sum of squares).
pub fn fit_statistics(
    names: Vec<String>,
    ols: &OlsFit,
    vcov: DMatrix<f64>,
    weather_cols: Vec<usize>,
    y_raw: &[f64],
    g: usize,
    absorbed: usize,
    singletons_dropped: usize,
) -> Result<RegressionFit> {
    let n = y_raw.len();
    let k = ols.beta.len();
    let k_total = k + absorbed;
    if g < 2 {
        return Err(EconError::DegenerateDof { n: g, k: 1 });
    }
    if n <= k_total {
        return Err(EconError::DegenerateDof { n, k: k_total });
    }
    let dof = g as f64 - 1.0;
    let se: Vec<f64> = (0..k).map(|j| vcov[(j, j)].max(0.0).sqrt()).collect();
    let t: Vec<f64> = ols
        .beta
        .iter()
        .zip(&se)
        .map(|(b, s)| if *s == 0.0 { if *b == 0.0 { 0.0 } else { b.signum() * f64::INFINITY } } else { b / s })
        .collect();
    let p: Vec<f64> = t.iter().map(|t| t_pvalue(*t, dof)).collect();
    let p_joint = if weather_cols.len() == 1 { p[weather_cols[0]] } else { wald_pvalue(&ols.beta, &vcov, &weather_cols, dof) };
    let mean = y_raw.iter().sum::<f64>() / n as f64;
    let tss: f64 = y_raw.iter().map(|v| (v - mean).powi(2)).sum();
    let rss: f64 = ols.residuals.iter().map(|r| r * r).sum();
    let r2 = if tss > 0.0 { 1.0 - rss / tss } else { f64::NAN };
    // the constant is either a column of X or spanned by the absorbed effects
    let adj_r2 = 1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - k_total as f64);
    Ok(RegressionFit {
        names,
        coef: ols.beta.clone(),
        se,
        t,
        p,
        vcov,
        weather_cols,
        p_joint,
        r2,
        adj_r2,
        n,
        g,
        absorbed,
        singletons_dropped,
        residuals: ols.residuals.clone(),
    })
}

/// Estimate a design: absorb household effects if requested, OLS, cluster
/// by household.
pub fn fit(design: &Design) -> Result<RegressionFit> {
    let rename = |e: EconError| match e {
        EconError::RankDeficient { column, .. } if column < design.names.len() => {
            EconError::RankDeficient { column, name: design.names[column].clone() }
        }
        other => other,
    };
    let (y_est, x_est, clusters, y_raw, absorbed, singletons) = if design.absorb_households {
        let w = within_transform(&design.y, &design.x, &design.households)?;
        let clusters: Vec<usize> = w.kept.iter().map(|&i| design.households[i]).collect();
        let y_raw: Vec<f64> = w.kept.iter().map(|&i| design.y[i]).collect();
        (w.y, w.x, clusters, y_raw, w.absorbed, w.singletons_dropped)
    } else {
        (design.y.clone(), design.x.clone(), design.households.clone(), design.y.clone(), 0, 0)
    };
    let ols = ols_fit(&y_est, &x_est).map_err(rename)?;
    let n = y_est.len();
    let vcov = sandwich(&ols.xtx_inv, &x_est, &ols.residuals, &clusters, DofParams { n, k: x_est.ncols() })?;
    let g = clusters.iter().collect::<BTreeSet<_>>().len();
    fit_statistics(design.names.clone(), &ols, vcov, design.weather_cols.clone(), &y_raw, g, absorbed, singletons)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let f = ols_fit(&[2.0, 4.0, 6.0, 8.0], &x).unwrap();
        assert!((f.beta[0] - 2.0).abs() < 1e-14);
        assert!(f.residuals.iter().all(|r| r.abs() < 1e-13));
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let x = DMatrix::from_column_slice(4, 3, &[1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 3.0, 5.0, 1.0, 2.0, 3.0, 5.0]);
        let e = ols_fit(&[1.0, 2.0, 3.0, 4.0], &x).unwrap_err();
        assert_eq!(e, EconError::RankDeficient { column: 2, name: "x2".into() });
    }

    #[test]
    fn five_point_normal_equations() {
        // y = a + b x by hand: sums over x = [1, 2, 3, 4, 5], y = [2, 3, 5, 4, 6]
        // Sx = 15, Sxx = 55, Sy = 20, Sxy = 66  =>  b = (5*66 - 15*20) / (5*55 - 225) = 0.9,
        // a = (20 - 0.9 * 15) / 5 = 1.3
        let x = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { i as f64 + 1.0 });
        let f = ols_fit(&[2.0, 3.0, 5.0, 4.0, 6.0], &x).unwrap();
        assert!((f.beta[0] - 1.3).abs() < 1e-10);
        assert!((f.beta[1] - 0.9).abs() < 1e-10);
    }

    #[test]
    fn all_singletons_no_variation() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert_eq!(within_transform(&[1.0, 2.0, 3.0], &x, &[0, 1, 2]).unwrap_err(), EconError::NoVariation);
    }

    #[test]
    fn demeaned_group_means_vanish() {
        let x = DMatrix::from_column_slice(5, 1, &[1.0, 4.0, 2.0, 8.0, 9.0]);
        let w = within_transform(&[3.0, 1.0, 4.0, 1.0, 5.0], &x, &[0, 0, 1, 1, 2]).unwrap();
        assert_eq!(w.kept, vec![0, 1, 2, 3]);
        assert_eq!(w.singletons_dropped, 1);
        assert_eq!(w.absorbed, 2);
        assert!((w.y[0] + w.y[1]).abs() < 1e-12 && (w.y[2] + w.y[3]).abs() < 1e-12);
        assert!((w.x[(0, 0)] + w.x[(1, 0)]).abs() < 1e-12);
    }

    #[test]
    fn one_cluster_rejected() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let e = cluster_robust_vcov(&x, &[0.1, -0.1, 0.2], &[0, 0, 0], DofParams { n: 3, k: 1 }).unwrap_err();
        assert_eq!(e, EconError::TooFewClusters(1));
    }

    #[test]
    fn pvalues() {
        assert_eq!(t_pvalue(0.0, 10.0), 1.0);
        assert!((t_pvalue(1.959963984540054, 1e7) - 0.05).abs() < 2e-3);
        assert!((t_critical(0.95, 2.0) - 4.302652729911275).abs() < 1e-6);
    }

    #[test]
    fn spec_kind_table() {
        assert_eq!(SpecKind::from_number(3), Some(SpecKind::LinearFeControls));
        assert_eq!(SpecKind::LinearFeControls.form(), Form::Linear);
        assert!(SpecKind::QuadraticFe.fixed_effects() && !SpecKind::QuadraticFe.controls());
        assert_eq!(SpecKind::parse("quadratic_pooled"), Some(SpecKind::QuadraticPooled));
        assert_eq!(SpecKind::parse("7"), None);
    }
}
