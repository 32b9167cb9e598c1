//! The regression battery: run enumeration, parallel execution, the
//! results table and its aggregations (significance shares, adjusted R^2
//! summaries, difference tests, specification curves).

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::econometrics::{self, t_critical, Form, RegressionFit, RegressionSpec, SpecKind};
use crate::extract::ObfuscationScheme;
use crate::metrics::{Family, MetricId};
use crate::survey::{merge_weather, MergedPanel, MetricColumn, MetricTable, Outcome, SurveyPanel};

/// 97.5% standard normal quantile.
pub const Z_95: f64 = 1.959963984540054;

pub const SIGNIFICANCE_LEVELS: [f64; 3] = [0.90, 0.95, 0.99];

#[derive(Debug, Error)]
pub enum BatteryError {
    #[error("empty dimension: {0}")]
    EmptyDimension(String),
    #[error("data provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("no usable rows in group {0}")]
    EmptyGroup(String),
    #[error("reference metric {0} missing")]
    MissingReference(String),
    #[error("invalid confidence interval: {lower} <= {estimate} <= {upper} does not hold")]
    InvalidCi { estimate: f64, lower: f64, upper: f64 },
    #[error("malformed results table: {0}")]
    Malformed(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, BatteryError>;

/// Rain+temperature metric blocks estimated jointly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ComboBlock {
    MeanMean,
    MedianMedian,
    TotalGdd,
    ZTotalZGdd,
    TwoMoments,
    ThreeMoments,
}

impl ComboBlock {
    pub const ALL: [ComboBlock; 6] = [
        ComboBlock::MeanMean,
        ComboBlock::MedianMedian,
        ComboBlock::TotalGdd,
        ComboBlock::ZTotalZGdd,
        ComboBlock::TwoMoments,
        ComboBlock::ThreeMoments,
    ];

    /// Regressors, rain first.
    pub fn metrics(self) -> Vec<MetricId> {
        use MetricId::*;
        match self {
            ComboBlock::MeanMean => vec![RainMean, TempMean],
            ComboBlock::MedianMedian => vec![RainMedian, TempMedian],
            ComboBlock::TotalGdd => vec![RainTotal, Gdd],
            ComboBlock::ZTotalZGdd => vec![RainZTotal, ZGdd],
            ComboBlock::TwoMoments => vec![RainMean, RainVariance, TempMean, TempVariance],
            ComboBlock::ThreeMoments => vec![RainMean, RainVariance, RainSkew, TempMean, TempVariance, TempSkew],
        }
    }

    pub fn allows(self, form: Form) -> bool {
        form == Form::Linear || matches!(self, ComboBlock::MeanMean | ComboBlock::TotalGdd)
    }

    pub fn name(self) -> &'static str {
        match self {
            ComboBlock::MeanMean => "combo_mean_mean",
            ComboBlock::MedianMedian => "combo_median_median",
            ComboBlock::TotalGdd => "combo_total_gdd",
            ComboBlock::ZTotalZGdd => "combo_ztotal_zgdd",
            ComboBlock::TwoMoments => "combo_two_moments",
            ComboBlock::ThreeMoments => "combo_three_moments",
        }
    }
}

impl FromStr for ComboBlock {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        Self::ALL
            .into_iter()
            .find(|b| b.name() == s || b.name().trim_start_matches("combo_") == s)
            .ok_or_else(|| format!("unknown combination block {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricSel {
    Single(MetricId),
    Combo(ComboBlock),
}

impl MetricSel {
    pub fn metrics(self) -> Vec<MetricId> {
        match self {
            MetricSel::Single(m) => vec![m],
            MetricSel::Combo(b) => b.metrics(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricSel::Single(m) => m.name(),
            MetricSel::Combo(b) => b.name(),
        }
    }
}

impl fmt::Display for MetricSel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricSel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.starts_with("combo_") {
            s.parse().map(MetricSel::Combo)
        } else {
            s.parse::<MetricId>().map(MetricSel::Single).map_err(|e| e.to_string())
        }
    }
}

/// Which p-value decides whether a run counts as significant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SignificanceRule {
    /// Joint Wald test over all weather terms.
    #[default]
    Joint,
    /// First weather term only.
    LinearTerm,
    /// Either of the two reported terms.
    EitherTerm,
}

impl FromStr for SignificanceRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "joint" => Ok(Self::Joint),
            "linear" | "linear_term" => Ok(Self::LinearTerm),
            "either" | "either_term" => Ok(Self::EitherTerm),
            other => Err(format!("unknown significance rule {other:?}")),
        }
    }
}

/// One regression of the battery. Field order is the output sort order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RunKey {
    pub country: String,
    /// Product of the single metric, or the rain product of a combination.
    pub product: String,
    /// Temperature product of a combination; empty otherwise.
    pub product2: String,
    pub scheme: ObfuscationScheme,
    pub selection: MetricSel,
    pub outcome: Outcome,
    pub spec: SpecKind,
}

impl RunKey {
    /// Weather columns to merge, in regressor order.
    pub fn columns(&self) -> Vec<MetricColumn> {
        self.selection
            .metrics()
            .into_iter()
            .map(|m| {
                let product = if matches!(self.selection, MetricSel::Combo(_)) && m.family() == Family::Temp {
                    &self.product2
                } else {
                    &self.product
                };
                MetricColumn::new(product, self.scheme, m)
            })
            .collect()
    }

    pub fn is_combo(&self) -> bool {
        matches!(self.selection, MetricSel::Combo(_))
    }

    pub fn field(&self, by: GroupBy) -> String {
        match by {
            GroupBy::Country => self.country.clone(),
            GroupBy::Product => {
                if self.product2.is_empty() {
                    self.product.clone()
                } else {
                    format!("{}+{}", self.product, self.product2)
                }
            }
            GroupBy::Scheme => self.scheme.name().to_string(),
            GroupBy::Metric => self.selection.name().to_string(),
            GroupBy::Family => match self.selection {
                MetricSel::Single(m) => match m.family() {
                    Family::Rain => "rain".into(),
                    Family::Temp => "temp".into(),
                },
                MetricSel::Combo(_) => "combo".into(),
            },
            GroupBy::Outcome => self.outcome.name().to_string(),
            GroupBy::Spec => self.spec.name().to_string(),
            GroupBy::Form => match self.spec.form() {
                Form::Linear => "linear".into(),
                Form::Quadratic => "quadratic".into(),
            },
            GroupBy::Variant => self.spec.variant().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroupBy {
    Country,
    Product,
    Scheme,
    Metric,
    Family,
    Outcome,
    Spec,
    Form,
    Variant,
}

impl GroupBy {
    pub fn name(self) -> &'static str {
        match self {
            GroupBy::Country => "country",
            GroupBy::Product => "product",
            GroupBy::Scheme => "scheme",
            GroupBy::Metric => "metric",
            GroupBy::Family => "family",
            GroupBy::Outcome => "outcome",
            GroupBy::Spec => "spec",
            GroupBy::Form => "form",
            GroupBy::Variant => "variant",
        }
    }
}

impl FromStr for GroupBy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        use GroupBy::*;
        [Country, Product, Scheme, Metric, Family, Outcome, Spec, Form, Variant]
            .into_iter()
            .find(|g| g.name() == s.trim())
            .ok_or_else(|| format!("unknown grouping {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatteryConfig {
    pub countries: Vec<String>,
    pub rain_products: Vec<String>,
    pub temp_products: Vec<String>,
    pub schemes: Vec<ObfuscationScheme>,
    pub metrics: Vec<MetricId>,
    pub outcomes: Vec<Outcome>,
    pub specs: Vec<SpecKind>,
    pub combos: Vec<ComboBlock>,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    pub rule: SignificanceRule,
    pub seed: u64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            countries: vec![],
            rain_products: vec![],
            temp_products: vec![],
            schemes: vec![ObfuscationScheme::DEFAULT],
            metrics: MetricId::ALL.to_vec(),
            outcomes: Outcome::ALL.to_vec(),
            specs: SpecKind::ALL.to_vec(),
            combos: vec![],
            threads: 0,
            rule: SignificanceRule::Joint,
            seed: 0,
        }
    }
}

impl BatteryConfig {
    pub fn validate(&self) -> Result<()> {
        let dims: [(&str, bool); 6] = [
            ("countries", self.countries.is_empty()),
            ("products", self.rain_products.is_empty() && self.temp_products.is_empty()),
            ("schemes", self.schemes.is_empty()),
            ("metrics", self.metrics.is_empty()),
            ("outcomes", self.outcomes.is_empty()),
            ("specs", self.specs.is_empty()),
        ];
        for (name, empty) in dims {
            if empty {
                return Err(BatteryError::EmptyDimension(name.into()));
            }
        }
        Ok(())
    }

    fn products(&self, f: Family) -> &[String] {
        match f {
            Family::Rain => &self.rain_products,
            Family::Temp => &self.temp_products,
        }
    }

    /// Closed-form number of single-metric runs.
    pub fn single_run_count(&self) -> usize {
        let per_cell: usize = self.metrics.iter().map(|m| self.products(m.family()).len()).sum();
        per_cell * self.countries.len() * self.schemes.len() * self.outcomes.len() * self.specs.len()
    }

    /// Closed-form number of combination runs.
    pub fn combo_run_count(&self) -> usize {
        let pairs = self.rain_products.len() * self.temp_products.len();
        let spec_slots: usize =
            self.combos.iter().map(|b| self.specs.iter().filter(|s| b.allows(s.form())).count()).sum();
        spec_slots * pairs * self.countries.len() * self.schemes.len() * self.outcomes.len()
    }
}

/// Every run of the battery in `RunKey` order: single-metric runs for each
/// metric on each product of its family, then the combination blocks over
/// every rain x temperature product pair sharing one scheme.
pub fn enumerate_runs(config: &BatteryConfig) -> Result<Vec<RunKey>> {
    config.validate()?;
    let mut keys = Vec::with_capacity(config.single_run_count() + config.combo_run_count());
    let mut push = |country: &String, product: &String, product2: &str, selection: MetricSel, forms: &dyn Fn(SpecKind) -> bool| {
        for scheme in &config.schemes {
            for outcome in &config.outcomes {
                for spec in config.specs.iter().filter(|s| forms(**s)) {
                    keys.push(RunKey {
                        country: country.clone(),
                        product: product.clone(),
                        product2: product2.to_string(),
                        scheme: *scheme,
                        selection,
                        outcome: *outcome,
                        spec: *spec,
                    });
                }
            }
        }
    };
    for country in &config.countries {
        for m in &config.metrics {
            for product in config.products(m.family()) {
                push(country, product, "", MetricSel::Single(*m), &|_| true);
            }
        }
        for block in &config.combos {
            for rain in &config.rain_products {
                for temp in &config.temp_products {
                    push(country, rain, temp, MetricSel::Combo(*block), &|s| block.allows(s.form()));
                }
            }
        }
    }
    keys.sort();
    keys.dedup();
    Ok(keys)
}

/// Source of merged panels for the battery.
pub trait PanelProvider: Sync {
    /// Survey rows of `country` joined with `columns`. Errors are fatal to
    /// the whole battery.
    fn panel(&self, country: &str, columns: &[MetricColumn]) -> Result<MergedPanel>;
}

/// Provider over an in-memory survey panel and metric table.
pub struct MemoryProvider<'a> {
    pub survey: &'a SurveyPanel,
    pub metrics: &'a MetricTable,
}

impl PanelProvider for MemoryProvider<'_> {
    fn panel(&self, country: &str, columns: &[MetricColumn]) -> Result<MergedPanel> {
        Ok(merge_weather(self.survey, self.metrics, Some(country), columns))
    }
}

pub const STATUS_OK: &str = "ok";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub key: RunKey,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub se1: Option<f64>,
    pub se2: Option<f64>,
    pub p1: Option<f64>,
    pub p2: Option<f64>,
    pub p_joint: Option<f64>,
    pub adj_r2: Option<f64>,
    pub n: Option<usize>,
    pub g: Option<usize>,
    pub status: String,
}

impl ResultRow {
    pub fn failed(key: RunKey, status: &str) -> Self {
        Self {
            key,
            beta1: None,
            beta2: None,
            se1: None,
            se2: None,
            p1: None,
            p2: None,
            p_joint: None,
            adj_r2: None,
            n: None,
            g: None,
            status: status.to_string(),
        }
    }

    pub fn from_fit(key: RunKey, fit: &RegressionFit) -> Self {
        // second reported term: the square of a quadratic, else the first
        // temperature term of a combination
        let first = fit.weather_cols[0];
        let second = match (&key.selection, key.spec.form()) {
            (MetricSel::Single(_), Form::Quadratic) => fit.weather_cols.get(1).copied(),
            (MetricSel::Single(_), Form::Linear) => None,
            (MetricSel::Combo(b), form) => {
                let metrics = b.metrics();
                let step = if form == Form::Quadratic { 2 } else { 1 };
                metrics.iter().position(|m| m.family() == Family::Temp).map(|i| fit.weather_cols[i * step])
            }
        };
        Self {
            beta1: Some(fit.coef[first]),
            beta2: second.map(|j| fit.coef[j]),
            se1: Some(fit.se[first]),
            se2: second.map(|j| fit.se[j]),
            p1: Some(fit.p[first]),
            p2: second.map(|j| fit.p[j]),
            p_joint: Some(fit.p_joint),
            adj_r2: Some(fit.adj_r2),
            n: Some(fit.n),
            g: Some(fit.g),
            status: STATUS_OK.to_string(),
            key,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }

    /// p-value deciding significance under `rule`.
    pub fn p_value(&self, rule: SignificanceRule) -> Option<f64> {
        match rule {
            SignificanceRule::Joint => self.p_joint,
            SignificanceRule::LinearTerm => self.p1,
            SignificanceRule::EitherTerm => match (self.p1, self.p2) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            },
        }
    }

    /// 95% interval of the first weather coefficient with G-1 dof.
    pub fn ci1(&self) -> Option<EstimateCI> {
        let (b, se, g) = (self.beta1?, self.se1?, self.g?);
        if g < 2 {
            return None;
        }
        let h = t_critical(0.95, g as f64 - 1.0) * se;
        EstimateCI::new(b, b - h, b + h).ok()
    }
}

fn run_one(key: &RunKey, panel: &MergedPanel) -> ResultRow {
    let spec = RegressionSpec::canonical(key.spec, key.selection.metrics());
    let fit = econometrics::build_design(panel, key.outcome, &spec).and_then(|d| econometrics::fit(&d));
    match fit {
        Ok(f) => ResultRow::from_fit(key.clone(), &f),
        Err(e) => ResultRow::failed(key.clone(), e.code()),
    }
}

/// Fit every key. Output order is `keys` order whatever the thread count;
/// per-run failures become rows, provider failures abort.
pub fn run_battery(keys: &[RunKey], provider: &dyn PanelProvider, threads: usize) -> Result<Vec<ResultRow>> {
    // runs sharing (country, columns) share one merged panel
    let mut groups: BTreeMap<(String, Vec<MetricColumn>), Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        groups.entry((k.country.clone(), k.columns())).or_default().push(i);
    }
    let groups: Vec<_> = groups.into_iter().collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| BatteryError::ThreadPool(e.to_string()))?;
    let done: Vec<Vec<(usize, ResultRow)>> = pool.install(|| {
        groups
            .par_iter()
            .map(|((country, columns), idx)| {
                let panel = provider.panel(country, columns)?;
                Ok(idx.iter().map(|&i| (i, run_one(&keys[i], &panel))).collect())
            })
            .collect::<Result<_>>()
    })?;
    let mut slots: Vec<Option<ResultRow>> = vec![None; keys.len()];
    for (i, row) in done.into_iter().flatten() {
        slots[i] = Some(row);
    }
    Ok(slots.into_iter().map(|r| r.expect("every key fitted")).collect())
}

pub const RESULT_COLUMNS: [&str; 18] = [
    "country", "product", "product2", "scheme", "metric", "outcome", "spec", "beta1", "beta2", "se1", "se2", "p1", "p2",
    "p_joint", "adj_r2", "n", "g", "status",
];

fn fmt_opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn parse_opt<T: FromStr>(s: &str, col: &str) -> Result<Option<T>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| BatteryError::Malformed(format!("bad {col} value {s:?}")))
}

pub fn write_results_csv<W: io::Write>(rows: &[ResultRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RESULT_COLUMNS)?;
    for r in rows {
        let k = &r.key;
        w.write_record([
            k.country.clone(),
            k.product.clone(),
            k.product2.clone(),
            k.scheme.number().to_string(),
            k.selection.name().to_string(),
            k.outcome.name().to_string(),
            k.spec.number().to_string(),
            fmt_opt(r.beta1),
            fmt_opt(r.beta2),
            fmt_opt(r.se1),
            fmt_opt(r.se2),
            fmt_opt(r.p1),
            fmt_opt(r.p2),
            fmt_opt(r.p_joint),
            fmt_opt(r.adj_r2),
            fmt_opt(r.n),
            fmt_opt(r.g),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv<R: io::Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(reader);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != RESULT_COLUMNS {
        return Err(BatteryError::Malformed(format!("expected header {}", RESULT_COLUMNS.join(","))));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let bad = |col: &str, v: &str| BatteryError::Malformed(format!("bad {col} value {v:?}"));
        let key = RunKey {
            country: f(0).to_string(),
            product: f(1).to_string(),
            product2: f(2).to_string(),
            scheme: f(3).parse().map_err(|_| bad("scheme", f(3)))?,
            selection: f(4).parse().map_err(|_| bad("metric", f(4)))?,
            outcome: Outcome::parse(f(5)).ok_or_else(|| bad("outcome", f(5)))?,
            spec: SpecKind::parse(f(6)).ok_or_else(|| bad("spec", f(6)))?,
        };
        rows.push(ResultRow {
            key,
            beta1: parse_opt(f(7), "beta1")?,
            beta2: parse_opt(f(8), "beta2")?,
            se1: parse_opt(f(9), "se1")?,
            se2: parse_opt(f(10), "se2")?,
            p1: parse_opt(f(11), "p1")?,
            p2: parse_opt(f(12), "p2")?,
            p_joint: parse_opt(f(13), "p_joint")?,
            adj_r2: parse_opt(f(14), "adj_r2")?,
            n: parse_opt(f(15), "n")?,
            g: parse_opt(f(16), "g")?,
            status: f(17).to_string(),
        });
    }
    Ok(rows)
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = p + z2 / (2.0 * n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lower = if k == 0 { 0.0 } else { ((centre - half) / denom).max(0.0) };
    let upper = if k as f64 == n { 1.0 } else { ((centre + half) / denom).min(1.0) };
    (lower, upper)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShareRow {
    pub group: Vec<String>,
    pub level: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub significant: usize,
    pub share: f64,
    pub lower: f64,
    pub upper: f64,
}

fn group_rows<'a>(rows: &'a [ResultRow], by: &[GroupBy]) -> BTreeMap<Vec<String>, Vec<&'a ResultRow>> {
    let mut groups: BTreeMap<Vec<String>, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(by.iter().map(|g| r.key.field(*g)).collect()).or_default().push(r);
    }
    groups
}

/// Share of runs significant at each confidence `level` (p < 1 - level) per
/// group, with Wilson 95% intervals. Failed runs are counted, not used.
pub fn significance_shares(rows: &[ResultRow], by: &[GroupBy], levels: &[f64], rule: SignificanceRule) -> Result<Vec<ShareRow>> {
    let mut out = Vec::new();
    for (group, members) in group_rows(rows, by) {
        let ps: Vec<f64> = members.iter().filter(|r| r.is_ok()).filter_map(|r| r.p_value(rule)).filter(|p| !p.is_nan()).collect();
        let n_failed = members.len() - ps.len();
        if ps.is_empty() {
            return Err(BatteryError::EmptyGroup(group.join("/")));
        }
        for &level in levels {
            let k = ps.iter().filter(|p| **p < 1.0 - level).count();
            let (lower, upper) = wilson_interval(k, ps.len(), Z_95);
            out.push(ShareRow {
                group: group.clone(),
                level,
                n_ok: ps.len(),
                n_failed,
                significant: k,
                share: k as f64 / ps.len() as f64,
                lower,
                upper,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateCI {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl EstimateCI {
    pub fn new(estimate: f64, lower: f64, upper: f64) -> Result<Self> {
        if lower <= estimate && estimate <= upper {
            Ok(Self { estimate, lower, upper })
        } else {
            Err(BatteryError::InvalidCi { estimate, lower, upper })
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// `a`'s estimate lies outside `b`'s closed interval.
pub fn weak_test(a: &EstimateCI, b: &EstimateCI) -> bool {
    !b.contains(a.estimate)
}

/// Weak test passes and the two closed intervals are disjoint.
pub fn strong_test(a: &EstimateCI, b: &EstimateCI) -> bool {
    weak_test(a, b) && (a.upper < b.lower || b.upper < a.lower)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffVerdict {
    pub reference: MetricId,
    pub metric: MetricId,
    pub cells: usize,
    pub weak: usize,
    pub strong: usize,
}

impl DiffVerdict {
    pub fn weak_majority(&self) -> bool {
        2 * self.weak > self.cells
    }

    pub fn strong_majority(&self) -> bool {
        2 * self.strong > self.cells
    }
}

/// Compare every single-metric run of the reference's family against the
/// reference run of the same (country, product, scheme, outcome, spec)
/// cell. Cells where either run failed are skipped.
pub fn reference_comparison(rows: &[ResultRow], reference: MetricId) -> Result<Vec<DiffVerdict>> {
    type Cell = (String, String, ObfuscationScheme, Outcome, SpecKind);
    let cell = |k: &RunKey| -> Cell { (k.country.clone(), k.product.clone(), k.scheme, k.outcome, k.spec) };
    let mut refs: BTreeMap<Cell, &ResultRow> = BTreeMap::new();
    let mut others: BTreeMap<MetricId, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        match r.key.selection {
            MetricSel::Single(m) if m == reference => {
                refs.insert(cell(&r.key), r);
            }
            MetricSel::Single(m) if m.family() == reference.family() => others.entry(m).or_default().push(r),
            _ => {}
        }
    }
    if refs.is_empty() {
        return Err(BatteryError::MissingReference(reference.to_string()));
    }
    let mut out = Vec::new();
    for (metric, runs) in others {
        let mut v = DiffVerdict { reference, metric, cells: 0, weak: 0, strong: 0 };
        for r in runs {
            let Some(base) = refs.get(&cell(&r.key)) else {
                return Err(BatteryError::MissingReference(format!("{reference} for {}", r.key.field(GroupBy::Product))));
            };
            let (Some(a), Some(b)) = (r.ci1(), base.ci1()) else { continue };
            v.cells += 1;
            v.weak += usize::from(weak_test(&a, &b));
            v.strong += usize::from(strong_test(&a, &b));
        }
        out.push(v);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub rank: usize,
    pub key: RunKey,
    pub ci: EstimateCI,
    pub p: f64,
    pub significant: bool,
}

/// Rows passing `filter`, ascending by first weather coefficient, ties in
/// `RunKey` order.
pub fn spec_curve_export(rows: &[ResultRow], filter: impl Fn(&ResultRow) -> bool, rule: SignificanceRule) -> Result<Vec<CurvePoint>> {
    let mut pts: Vec<(EstimateCI, f64, &RunKey)> = rows
        .iter()
        .filter(|r| r.is_ok() && filter(r))
        .filter_map(|r| Some((r.ci1()?, r.p_value(rule)?, &r.key)))
        .collect();
    if pts.is_empty() {
        return Err(BatteryError::EmptyGroup("specification curve".into()));
    }
    pts.sort_by(|a, b| a.0.estimate.total_cmp(&b.0.estimate).then_with(|| a.2.cmp(b.2)));
    Ok(pts
        .into_iter()
        .enumerate()
        .map(|(i, (ci, p, key))| CurvePoint { rank: i + 1, key: key.clone(), ci, p, significant: p < 0.05 })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct R2Row {
    pub group: String,
    pub spec: SpecKind,
    pub n: usize,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Mean adjusted R^2 with a t-based 95% interval per (group, spec).
pub fn r2_summary(rows: &[ResultRow], by: GroupBy) -> Result<Vec<R2Row>> {
    let mut groups: BTreeMap<(String, SpecKind), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.key.field(by), r.key.spec)).or_default();
        if let (true, Some(v)) = (r.is_ok(), r.adj_r2) {
            if v.is_finite() {
                groups.get_mut(&(r.key.field(by), r.key.spec)).unwrap().push(v);
            }
        }
    }
    groups
        .into_iter()
        .map(|((group, spec), v)| {
            if v.len() < 2 {
                return Err(BatteryError::EmptyGroup(format!("{group}/{spec}")));
            }
            let (mean, lower, upper) = mean_ci(&v);
            Ok(R2Row { group, spec, n: v.len(), mean, lower, upper })
        })
        .collect()
}

/// Mean and t-based 95% interval (`v.len() >= 2`).
pub fn mean_ci(v: &[f64]) -> (f64, f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let h = t_critical(0.95, n - 1.0) * sd / n.sqrt();
    (mean, mean - h, mean + h)
}

pub fn write_shares_csv<W: io::Write>(rows: &[ShareRow], by: &[GroupBy], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = by.iter().map(|g| g.name()).collect();
    header.extend(["level", "n_ok", "n_failed", "significant", "share", "ci_lower", "ci_upper"]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = r.group.clone();
        rec.extend([
            r.level.to_string(),
            r.n_ok.to_string(),
            r.n_failed.to_string(),
            r.significant.to_string(),
            r.share.to_string(),
            r.lower.to_string(),
            r.upper.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_r2_csv<W: io::Write>(rows: &[R2Row], by: GroupBy, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([by.name(), "spec", "n", "mean_adj_r2", "ci_lower", "ci_upper"])?;
    for r in rows {
        w.write_record([
            r.group.clone(),
            r.spec.number().to_string(),
            r.n.to_string(),
            r.mean.to_string(),
            r.lower.to_string(),
            r.upper.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_diff_tests_csv<W: io::Write>(rows: &[DiffVerdict], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["reference", "metric", "cells", "weak", "strong", "weak_majority", "strong_majority"])?;
    for r in rows {
        w.write_record([
            r.reference.to_string(),
            r.metric.to_string(),
            r.cells.to_string(),
            r.weak.to_string(),
            r.strong.to_string(),
            r.weak_majority().to_string(),
            r.strong_majority().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_spec_curve_csv<W: io::Write>(points: &[CurvePoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "rank", "country", "product", "product2", "scheme", "metric", "outcome", "spec", "beta", "ci_lower", "ci_upper", "p",
        "significant",
    ])?;
    for p in points {
        let k = &p.key;
        w.write_record([
            p.rank.to_string(),
            k.country.clone(),
            k.product.clone(),
            k.product2.clone(),
            k.scheme.number().to_string(),
            k.selection.name().to_string(),
            k.outcome.name().to_string(),
            k.spec.number().to_string(),
            p.ci.estimate.to_string(),
            p.ci.lower.to_string(),
            p.ci.upper.to_string(),
            p.p.to_string(),
            u8::from(p.significant).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_country() -> BatteryConfig {
        BatteryConfig {
            countries: vec!["eth".into()],
            rain_products: vec!["chirps".into()],
            metrics: vec![MetricId::RainMean, MetricId::RainTotal],
            outcomes: vec![Outcome::Yield],
            ..Default::default()
        }
    }

    fn ok_row(metric: MetricId, beta: f64, se: f64, p: f64) -> ResultRow {
        let key = RunKey {
            country: "eth".into(),
            product: "chirps".into(),
            product2: String::new(),
            scheme: ObfuscationScheme::DEFAULT,
            selection: MetricSel::Single(metric),
            outcome: Outcome::Yield,
            spec: SpecKind::LinearFe,
        };
        ResultRow {
            beta1: Some(beta),
            se1: Some(se),
            p1: Some(p),
            p_joint: Some(p),
            adj_r2: Some(0.2),
            n: Some(100),
            g: Some(50),
            ..ResultRow::failed(key, STATUS_OK)
        }
    }

    #[test]
    fn small_enumeration() {
        let keys = enumerate_runs(&one_country()).unwrap();
        assert_eq!(keys.len(), 12);
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn paper_scope_count() {
        let cfg = BatteryConfig {
            countries: (0..6).map(|i| format!("c{i}")).collect(),
            rain_products: (0..6).map(|i| format!("r{i}")).collect(),
            temp_products: (0..3).map(|i| format!("t{i}")).collect(),
            schemes: ObfuscationScheme::ALL.to_vec(),
            combos: ComboBlock::ALL.to_vec(),
            ..Default::default()
        };
        assert_eq!(cfg.single_run_count(), 77_760);
        assert_eq!(cfg.combo_run_count(), 51_840);
        assert_eq!(enumerate_runs(&cfg).unwrap().len(), 129_600);
    }

    #[test]
    fn empty_metrics() {
        let cfg = BatteryConfig { metrics: vec![], ..one_country() };
        assert!(matches!(enumerate_runs(&cfg), Err(BatteryError::EmptyDimension(d)) if d == "metrics"));
    }

    #[test]
    fn wilson_four_of_ten() {
        let (lo, hi) = wilson_interval(4, 10, Z_95);
        assert!((lo - 0.168).abs() < 1e-3 && (hi - 0.687).abs() < 1e-3);
    }

    #[test]
    fn shares_and_empty_group() {
        let rows: Vec<_> = (0..10).map(|i| ok_row(MetricId::RainMean, 1.0, 1.0, if i < 4 { 0.01 } else { 0.5 })).collect();
        let s = significance_shares(&rows, &[GroupBy::Metric], &[0.95], SignificanceRule::Joint).unwrap();
        assert_eq!(s[0].share, 0.4);
        let failed: Vec<_> = rows.iter().map(|r| ResultRow::failed(r.key.clone(), "RankDeficient")).collect();
        assert!(matches!(significance_shares(&failed, &[], &[0.95], SignificanceRule::Joint), Err(BatteryError::EmptyGroup(_))));
    }

    #[test]
    fn difference_tests() {
        let ci = |e, l, u| EstimateCI::new(e, l, u).unwrap();
        let a = ci(1.0, 0.8, 1.2);
        assert!(weak_test(&a, &ci(2.0, 1.5, 2.5)) && strong_test(&a, &ci(2.0, 1.5, 2.5)));
        assert!(!weak_test(&a, &ci(1.1, 0.9, 1.3)));
        assert!(!weak_test(&a, &ci(1.1, 1.0, 1.3)));
        let b = ci(1.3, 1.1, 1.5);
        assert!(weak_test(&a, &b) && !strong_test(&a, &b));
        assert!(!strong_test(&a, &a));
        assert!(EstimateCI::new(1.0, 1.1, 1.2).is_err());
    }

    #[test]
    fn spec_curve_order_and_ties() {
        let mut rows = vec![
            ok_row(MetricId::RainTotal, 3.0, 1.0, 0.5),
            ok_row(MetricId::RainMean, 1.0, 1.0, 0.5),
            ok_row(MetricId::RainMedian, 2.0, 1.0, 0.5),
        ];
        let pts = spec_curve_export(&rows, |_| true, SignificanceRule::Joint).unwrap();
        assert_eq!(pts.iter().map(|p| p.ci.estimate).collect::<Vec<_>>(), vec![1.0, 2.0, 3.0]);
        rows[0].beta1 = Some(1.0);
        let pts = spec_curve_export(&rows, |_| true, SignificanceRule::Joint).unwrap();
        assert_eq!(pts[0].key.selection, MetricSel::Single(MetricId::RainMean));
        assert!(spec_curve_export(&rows, |_| false, SignificanceRule::Joint).is_err());
    }

    #[test]
    fn r2_summary_cases() {
        let mk = |v: f64| ResultRow { adj_r2: Some(v), ..ok_row(MetricId::RainMean, 1.0, 1.0, 0.5) };
        let s = r2_summary(&[mk(0.1), mk(0.2), mk(0.3)], GroupBy::Metric).unwrap();
        let h = 4.302652729911275 * 0.1 / 3f64.sqrt();
        assert!((s[0].mean - 0.2).abs() < 1e-12);
        assert!((s[0].upper - 0.2 - h).abs() < 1e-9);
        let s = r2_summary(&[mk(0.2), mk(0.2)], GroupBy::Metric).unwrap();
        assert_eq!(s[0].lower, s[0].upper);
        assert!(r2_summary(&[mk(0.2)], GroupBy::Metric).is_err());
    }

    #[test]
    fn reference_self_and_missing() {
        let rows = vec![ok_row(MetricId::RainMean, 1.0, 0.1, 0.01), ok_row(MetricId::RainTotal, 1.0, 0.1, 0.01)];
        let v = reference_comparison(&rows, MetricId::RainMean).unwrap();
        assert_eq!((v[0].cells, v[0].weak, v[0].strong), (1, 0, 0));
        let far = vec![ok_row(MetricId::RainMean, 1.0, 0.1, 0.01), ok_row(MetricId::RainTotal, 5.0, 0.1, 0.01)];
        assert!(reference_comparison(&far, MetricId::RainMean).unwrap()[0].strong_majority());
        assert!(matches!(reference_comparison(&rows[1..], MetricId::RainMean), Err(BatteryError::MissingReference(_))));
    }

    #[test]
    fn results_round_trip() {
        let mut rows = vec![ok_row(MetricId::RainMean, 0.123456789, 0.01, 1e-7)];
        rows.push(ResultRow::failed(rows[0].key.clone(), "AllMissingMetric"));
        let mut buf = Vec::new();
        write_results_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_results_csv(buf.as_slice()).unwrap(), rows);
    }
}
