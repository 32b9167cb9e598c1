//! Household panel rows, the synthetic survey generator and the join of
//! weather metrics onto household-years.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{fnv1a, ObfuscationScheme};
use crate::metrics::MetricId;

#[derive(Debug, Error)]
pub enum SurveyError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("duplicate household-year ({country}, {hh_id}, {year})")]
    DuplicateKey { country: String, hh_id: String, year: i32 },
    #[error("negative {field} for household {hh_id} in {year}")]
    NegativeOutcome { field: &'static str, hh_id: String, year: i32 },
    #[error("{field} must be 0 or 1 for household {hh_id} in {year}")]
    InvalidBinary { field: &'static str, hh_id: String, year: i32 },
    #[error("no weather metric for household {hh_id} in {year}")]
    MissingMetric { hh_id: String, year: i32 },
    #[error("duplicate metric record for {0}")]
    AmbiguousJoin(String),
    #[error("invalid survey config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, SurveyError>;

/// Inverse hyperbolic sine, `ln(x + sqrt(x^2 + 1))`.
pub fn ihs(x: f64) -> f64 {
    x.asinh()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Yield,
    Value,
}

impl Outcome {
    pub const ALL: [Outcome; 2] = [Outcome::Yield, Outcome::Value];

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Yield => "yield",
            Outcome::Value => "value",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.name().eq_ignore_ascii_case(s.trim()))
    }
}

/// One household-year. Field order is the survey.csv column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRow {
    pub country: String,
    pub hh_id: String,
    pub ea_id: String,
    pub admin_id: String,
    pub year: i32,
    pub wave: u32,
    /// kg/ha of the primary cereal
    pub primary_crop_yield: f64,
    /// 2010 USD/ha
    pub total_farm_value: f64,
    /// days/ha
    pub labor_rate: f64,
    /// kg/ha
    pub fertilizer_rate: f64,
    /// USD/ha
    pub seed_rate: f64,
    pub pesticide: u8,
    pub herbicide: u8,
    pub irrigation: u8,
    pub mover: u8,
}

pub const SURVEY_COLUMNS: [&str; 15] = [
    "country",
    "hh_id",
    "ea_id",
    "admin_id",
    "year",
    "wave",
    "primary_crop_yield",
    "total_farm_value",
    "labor_rate",
    "fertilizer_rate",
    "seed_rate",
    "pesticide",
    "herbicide",
    "irrigation",
    "mover",
];

/// Names of the control regressors, in design-matrix order.
pub const CONTROL_NAMES: [&str; 6] = ["ihs_labor", "ihs_fertilizer", "ihs_seed", "pesticide", "herbicide", "irrigation"];

impl SurveyRow {
    pub fn outcome(&self, o: Outcome) -> f64 {
        match o {
            Outcome::Yield => self.primary_crop_yield,
            Outcome::Value => self.total_farm_value,
        }
    }

    /// Input controls: IHS of the rates, binaries as-is.
    pub fn controls(&self) -> [f64; 6] {
        [
            ihs(self.labor_rate),
            ihs(self.fertilizer_rate),
            ihs(self.seed_rate),
            self.pesticide as f64,
            self.herbicide as f64,
            self.irrigation as f64,
        ]
    }

    fn validate(&self) -> Result<()> {
        let neg = |field, v: f64| {
            if !(v >= 0.0) {
                Err(SurveyError::NegativeOutcome { field, hh_id: self.hh_id.clone(), year: self.year })
            } else {
                Ok(())
            }
        };
        neg("primary_crop_yield", self.primary_crop_yield)?;
        neg("total_farm_value", self.total_farm_value)?;
        neg("labor_rate", self.labor_rate)?;
        neg("fertilizer_rate", self.fertilizer_rate)?;
        neg("seed_rate", self.seed_rate)?;
        for (field, v) in [
            ("pesticide", self.pesticide),
            ("herbicide", self.herbicide),
            ("irrigation", self.irrigation),
            ("mover", self.mover),
        ] {
            if v > 1 {
                return Err(SurveyError::InvalidBinary { field, hh_id: self.hh_id.clone(), year: self.year });
            }
        }
        Ok(())
    }
}

/// A validated, mover-free panel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurveyPanel {
    pub rows: Vec<SurveyRow>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub movers_excluded: usize,
}

impl SurveyPanel {
    /// Validate rows, drop movers and reject duplicate household-years.
    pub fn from_rows(rows: Vec<SurveyRow>) -> Result<(Self, LoadReport)> {
        let mut seen = BTreeSet::new();
        let mut kept = Vec::with_capacity(rows.len());
        let mut report = LoadReport { rows_read: rows.len(), movers_excluded: 0 };
        for r in rows {
            r.validate()?;
            if !seen.insert((r.country.clone(), r.hh_id.clone(), r.year)) {
                return Err(SurveyError::DuplicateKey { country: r.country, hh_id: r.hh_id, year: r.year });
            }
            if r.mover == 1 {
                report.movers_excluded += 1;
            } else {
                kept.push(r);
            }
        }
        Ok((Self { rows: kept }, report))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn countries(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.country.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }
}

pub fn read_survey_csv<R: io::Read>(reader: R) -> Result<(SurveyPanel, LoadReport)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != SURVEY_COLUMNS {
        return Err(SurveyError::SchemaMismatch(format!("expected columns {:?}, found {:?}", SURVEY_COLUMNS, header)));
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<SurveyRow>() {
        rows.push(rec.map_err(|e| SurveyError::SchemaMismatch(e.to_string()))?);
    }
    SurveyPanel::from_rows(rows)
}

pub fn load_survey_csv(path: impl AsRef<Path>) -> Result<(SurveyPanel, LoadReport)> {
    read_survey_csv(std::fs::File::open(path)?)
}

pub fn write_survey_csv<W: io::Write>(panel: &SurveyPanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in &panel.rows {
        w.serialize(r)?;
    }
    if panel.rows.is_empty() {
        w.write_record(SURVEY_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

/// Identity of a household for the generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HouseholdId {
    pub country: String,
    pub hh_id: String,
    pub ea_id: String,
    pub admin_id: String,
}

/// Data-generating process for synthetic panels. Outcomes are generated on
/// the IHS scale as
/// `alpha_h + gamma_t + X pi + beta f(W) + beta2 f(W)^2 + e` and mapped
/// back to levels with `sinh`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSurveyConfig {
    pub years: Vec<i32>,
    pub metric: MetricId,
    pub beta: f64,
    pub beta_quadratic: f64,
    /// Effects of the six controls, in [`CONTROL_NAMES`] order.
    pub input_effects: [f64; 6],
    pub yield_intercept: f64,
    pub value_intercept: f64,
    pub household_effect_sd: f64,
    /// Added per wave; cycled if shorter than `years`.
    pub year_effects: Vec<f64>,
    pub noise_sd: f64,
    pub mover_share: f64,
    pub seed: u64,
}

impl Default for SynthSurveyConfig {
    fn default() -> Self {
        Self {
            years: vec![2011, 2013, 2015],
            metric: MetricId::RainTotal,
            beta: 0.3,
            beta_quadratic: 0.0,
            input_effects: [0.10, 0.05, 0.08, 0.10, 0.05, 0.20],
            yield_intercept: 4.5,
            value_intercept: 3.5,
            household_effect_sd: 0.4,
            year_effects: vec![0.0, 0.1, -0.05],
            noise_sd: 0.5,
            mover_share: 0.0,
            seed: 1,
        }
    }
}

impl SynthSurveyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SurveyError::InvalidConfig(m.to_string()));
        if self.years.is_empty() {
            return bad("years must be non-empty");
        }
        if !(self.noise_sd >= 0.0) || !(self.household_effect_sd >= 0.0) {
            return bad("standard deviations must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.mover_share) {
            return bad("mover_share must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Regressor value of `metric` as it enters the model (IHS where the metric
/// takes large values).
pub fn weather_regressor(metric: MetricId, value: f64) -> f64 {
    if metric.uses_ihs() {
        ihs(value)
    } else {
        value
    }
}

/// Generate a panel for `households` over `config.years`, planting the
/// weather effect on `weather[(hh_id, year)]` (the raw metric value).
pub fn synth_survey(config: &SynthSurveyConfig, households: &[HouseholdId], weather: &HashMap<(String, i32), f64>) -> Result<SurveyPanel> {
    config.validate()?;
    let mut rows = Vec::with_capacity(households.len() * config.years.len());
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    for h in households {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ fnv1a(format!("{}/{}", h.country, h.hh_id).as_bytes()));
        let alpha = config.household_effect_sd * std_normal.sample(&mut rng);
        // persistent household propensities for input use
        let labor_scale: f64 = 3.5 + 0.5 * std_normal.sample(&mut rng);
        let fert_prob: f64 = rng.gen_range(0.2..0.8);
        let is_mover = rng.gen::<f64>() < config.mover_share;
        for (wave, &year) in config.years.iter().enumerate() {
            let w_raw = *weather
                .get(&(h.hh_id.clone(), year))
                .ok_or_else(|| SurveyError::MissingMetric { hh_id: h.hh_id.clone(), year })?;
            if !w_raw.is_finite() {
                return Err(SurveyError::MissingMetric { hh_id: h.hh_id.clone(), year });
            }
            let w = weather_regressor(config.metric, w_raw);
            let gamma = if config.year_effects.is_empty() { 0.0 } else { config.year_effects[wave % config.year_effects.len()] };
            let labor_rate = (labor_scale + 0.4 * std_normal.sample(&mut rng)).exp();
            let fertilizer_rate = if rng.gen::<f64>() < fert_prob { (3.0 + 0.6 * std_normal.sample(&mut rng)).exp() } else { 0.0 };
            let seed_rate = (2.5 + 0.5 * std_normal.sample(&mut rng)).exp();
            let pesticide = u8::from(rng.gen::<f64>() < 0.15);
            let herbicide = u8::from(rng.gen::<f64>() < 0.2);
            let irrigation = u8::from(rng.gen::<f64>() < 0.05);
            let x = [ihs(labor_rate), ihs(fertilizer_rate), ihs(seed_rate), pesticide as f64, herbicide as f64, irrigation as f64];
            let xpi: f64 = x.iter().zip(&config.input_effects).map(|(a, b)| a * b).sum();
            let signal = alpha + gamma + xpi + config.beta * w + config.beta_quadratic * w * w;
            let e_y = config.noise_sd * std_normal.sample(&mut rng);
            let e_v = config.noise_sd * std_normal.sample(&mut rng);
            let level = |ihs_value: f64| ihs_value.sinh().max(0.0);
            rows.push(SurveyRow {
                country: h.country.clone(),
                hh_id: h.hh_id.clone(),
                ea_id: h.ea_id.clone(),
                admin_id: h.admin_id.clone(),
                year,
                wave: wave as u32 + 1,
                primary_crop_yield: level(config.yield_intercept + signal + e_y),
                total_farm_value: level(config.value_intercept + signal + e_v),
                labor_rate,
                fertilizer_rate,
                seed_rate,
                pesticide,
                herbicide,
                irrigation,
                mover: u8::from(is_mover),
            });
        }
    }
    Ok(SurveyPanel { rows })
}

/// One row of metrics.csv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub country: String,
    pub product_id: String,
    pub scheme: String,
    pub hh_id: String,
    pub year: i32,
    pub metric_id: String,
    /// Empty in the CSV when missing.
    pub value: Option<f64>,
    pub missing_flag: u8,
    pub proxy_flag: u8,
}

/// A weather column to attach to the panel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MetricColumn {
    pub product_id: String,
    pub scheme: ObfuscationScheme,
    pub metric: MetricId,
}

impl MetricColumn {
    pub fn new(product_id: &str, scheme: ObfuscationScheme, metric: MetricId) -> Self {
        Self { product_id: product_id.to_string(), scheme, metric }
    }

    pub fn label(&self) -> String {
        format!("{}:{}:{}", self.product_id, self.scheme, self.metric)
    }
}

type CellKey = (String, String, i32);

/// In-memory index over metric records:
/// (country, column) -> (country, hh_id, year) -> value (NaN when missing).
#[derive(Debug, Clone, Default)]
pub struct MetricTable {
    columns: HashMap<(String, MetricColumn), HashMap<CellKey, f64>>,
}

impl MetricTable {
    pub fn from_records(records: impl IntoIterator<Item = MetricRecord>) -> Result<Self> {
        let mut t = MetricTable::default();
        for r in records {
            let scheme: ObfuscationScheme = r
                .scheme
                .parse()
                .map_err(|_| SurveyError::SchemaMismatch(format!("unknown scheme {:?}", r.scheme)))?;
            let metric: MetricId = r
                .metric_id
                .parse()
                .map_err(|_| SurveyError::SchemaMismatch(format!("unknown metric {:?}", r.metric_id)))?;
            let value = if r.missing_flag == 1 { f64::NAN } else { r.value.unwrap_or(f64::NAN) };
            t.insert(&r.country, &MetricColumn { product_id: r.product_id, scheme, metric }, &r.hh_id, r.year, value)?;
        }
        Ok(t)
    }

    pub fn insert(&mut self, country: &str, column: &MetricColumn, hh_id: &str, year: i32, value: f64) -> Result<()> {
        let cells = self.columns.entry((country.to_string(), column.clone())).or_default();
        if cells.insert((country.to_string(), hh_id.to_string(), year), value).is_some() {
            return Err(SurveyError::AmbiguousJoin(format!("{country}/{}/{hh_id}/{year}", column.label())));
        }
        Ok(())
    }

    pub fn get(&self, country: &str, column: &MetricColumn, hh_id: &str, year: i32) -> Option<f64> {
        self.columns
            .get(&(country.to_string(), column.clone()))?
            .get(&(country.to_string(), hh_id.to_string(), year))
            .copied()
    }

    fn column(&self, country: &str, column: &MetricColumn) -> Option<&HashMap<CellKey, f64>> {
        self.columns.get(&(country.to_string(), column.clone()))
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }
}

pub fn read_metric_records<R: io::Read>(reader: R) -> Result<Vec<MetricRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(SurveyError::from)).collect()
}

pub fn write_metric_records<W: io::Write>(records: &[MetricRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRecord {
    pub key: String,
    pub reason: String,
}

pub const DROP_NO_METRIC: &str = "no metric";
pub const DROP_MISSING_METRIC: &str = "missing metric";

/// Survey rows joined with weather columns. `values[c][i]` is column `c`
/// for row `i`; every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedPanel {
    pub rows: Vec<SurveyRow>,
    pub columns: Vec<MetricColumn>,
    pub values: Vec<Vec<f64>>,
    pub drops: Vec<DropRecord>,
    /// Columns whose every matched record was flagged missing.
    pub all_missing: Vec<MetricColumn>,
}

impl MergedPanel {
    pub fn column(&self, c: &MetricColumn) -> Option<&[f64]> {
        self.columns.iter().position(|x| x == c).map(|i| self.values[i].as_slice())
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }
}

/// Inner join of `panel` rows of `country` (all countries when `None`) with
/// `columns`. Rows lacking a record or carrying a missing value are dropped
/// and logged.
pub fn merge_weather(panel: &SurveyPanel, table: &MetricTable, country: Option<&str>, columns: &[MetricColumn]) -> MergedPanel {
    let mut rows = Vec::new();
    let mut values = vec![Vec::new(); columns.len()];
    let mut drops = Vec::new();
    let mut seen_value = vec![false; columns.len()];
    let mut seen_record = vec![false; columns.len()];
    let mut scratch = vec![0.0; columns.len()];
    for r in panel.rows.iter().filter(|r| country.map_or(true, |c| r.country == c)) {
        let key = (r.country.clone(), r.hh_id.clone(), r.year);
        let mut reason = None;
        for (i, col) in columns.iter().enumerate() {
            match table.column(&r.country, col).and_then(|m| m.get(&key)) {
                None => {
                    reason.get_or_insert_with(|| format!("{DROP_NO_METRIC}: {}", col.label()));
                }
                Some(v) if !v.is_finite() => {
                    seen_record[i] = true;
                    reason.get_or_insert_with(|| format!("{DROP_MISSING_METRIC}: {}", col.label()));
                }
                Some(v) => {
                    seen_record[i] = true;
                    seen_value[i] = true;
                    scratch[i] = *v;
                }
            }
        }
        match reason {
            Some(reason) => drops.push(DropRecord { key: format!("{}/{}/{}", r.country, r.hh_id, r.year), reason }),
            None => {
                rows.push(r.clone());
                for (v, s) in values.iter_mut().zip(&scratch) {
                    v.push(*s);
                }
            }
        }
    }
    let all_missing = columns
        .iter()
        .enumerate()
        .filter(|(i, _)| seen_record[*i] && !seen_value[*i])
        .map(|(_, c)| c.clone())
        .collect();
    MergedPanel { rows, columns: columns.to_vec(), values, drops, all_missing }
}

pub fn write_drops_csv<W: io::Write>(drops: &[DropRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["key", "reason"])?;
    for d in drops {
        w.write_record([&d.key, &d.reason])?;
    }
    w.flush()?;
    Ok(())
}

/// Wide CSV of a merged panel: the survey columns followed by one column
/// per metric label.
pub fn write_merged_csv<W: io::Write>(m: &MergedPanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = SURVEY_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(m.columns.iter().map(|c| c.label()));
    w.write_record(&header)?;
    for (i, r) in m.rows.iter().enumerate() {
        let mut rec = vec![
            r.country.clone(),
            r.hh_id.clone(),
            r.ea_id.clone(),
            r.admin_id.clone(),
            r.year.to_string(),
            r.wave.to_string(),
            r.primary_crop_yield.to_string(),
            r.total_farm_value.to_string(),
            r.labor_rate.to_string(),
            r.fertilizer_rate.to_string(),
            r.seed_rate.to_string(),
            r.pesticide.to_string(),
            r.herbicide.to_string(),
            r.irrigation.to_string(),
            r.mover.to_string(),
        ];
        rec.extend(m.values.iter().map(|c| c[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Descriptive means per country, used for sanity checks on synthetic data.
pub fn country_means(panel: &SurveyPanel) -> BTreeMap<String, (f64, f64)> {
    let mut acc: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for r in &panel.rows {
        let e = acc.entry(r.country.clone()).or_default();
        e.0 += r.primary_crop_yield;
        e.1 += r.total_farm_value;
        e.2 += 1;
    }
    acc.into_iter().map(|(k, (y, v, n))| (k, (y / n as f64, v / n as f64))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(hh: &str, year: i32) -> SurveyRow {
        SurveyRow {
            country: "mwi".into(),
            hh_id: hh.into(),
            ea_id: "e".into(),
            admin_id: "a".into(),
            year,
            wave: 1,
            primary_crop_yield: 900.0,
            total_farm_value: 300.0,
            labor_rate: 40.0,
            fertilizer_rate: 0.0,
            seed_rate: 12.0,
            pesticide: 0,
            herbicide: 1,
            irrigation: 0,
            mover: 0,
        }
    }

    #[test]
    fn ihs_values() {
        assert_eq!(ihs(0.0), 0.0);
        assert!(((ihs(1e6) - (2e6f64).ln()) / (2e6f64).ln()).abs() < 1e-9);
        assert_eq!(ihs(-3.5), -ihs(3.5));
    }

    #[test]
    fn duplicate_key_rejected() {
        let e = SurveyPanel::from_rows(vec![row("h1", 2011), row("h1", 2011)]).unwrap_err();
        assert!(matches!(e, SurveyError::DuplicateKey { .. }));
    }

    #[test]
    fn movers_excluded() {
        let mut m = row("h2", 2011);
        m.mover = 1;
        let mut m2 = row("h3", 2013);
        m2.mover = 1;
        let (p, rep) = SurveyPanel::from_rows(vec![row("h1", 2011), m, m2]).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(rep.movers_excluded, 2);
    }

    #[test]
    fn negative_outcome_rejected() {
        let mut r = row("h1", 2011);
        r.primary_crop_yield = -1.0;
        assert!(matches!(SurveyPanel::from_rows(vec![r]), Err(SurveyError::NegativeOutcome { .. })));
    }

    #[test]
    fn header_mismatch() {
        let csv = "country,hh,ea\nmwi,1,2\n";
        assert!(matches!(read_survey_csv(csv.as_bytes()), Err(SurveyError::SchemaMismatch(_))));
    }

    fn table_with(n: usize, missing: &[usize]) -> (SurveyPanel, MetricTable, MetricColumn) {
        let rows: Vec<_> = (0..10).map(|i| row(&format!("h{i}"), 2011)).collect();
        let (p, _) = SurveyPanel::from_rows(rows).unwrap();
        let col = MetricColumn::new("chirps", ObfuscationScheme::ModEaSimple, MetricId::RainTotal);
        let mut t = MetricTable::default();
        for i in 0..n {
            let v = if missing.contains(&i) { f64::NAN } else { i as f64 };
            t.insert("mwi", &col, &format!("h{i}"), 2011, v).unwrap();
        }
        (p, t, col)
    }

    #[test]
    fn merge_drops_unmatched() {
        let (p, t, col) = table_with(8, &[]);
        let m = merge_weather(&p, &t, None, &[col.clone()]);
        assert_eq!(m.n_rows(), 8);
        assert_eq!(m.drops.len(), 2);
        assert!(m.drops.iter().all(|d| d.reason.starts_with(DROP_NO_METRIC)));
        assert_eq!(m.column(&col).unwrap()[3], 3.0);
        // idempotent for a repeated selection
        assert_eq!(merge_weather(&p, &t, None, &[col.clone()]), m);
    }

    #[test]
    fn merge_flags_all_missing_column() {
        let (p, t, col) = table_with(10, &(0..10).collect::<Vec<_>>());
        let m = merge_weather(&p, &t, None, &[col.clone()]);
        assert_eq!(m.n_rows(), 0);
        assert_eq!(m.all_missing, vec![col]);
    }

    #[test]
    fn duplicate_metric_is_ambiguous() {
        let (_, mut t, col) = table_with(1, &[]);
        assert!(matches!(t.insert("mwi", &col, "h0", 2011, 1.0), Err(SurveyError::AmbiguousJoin(_))));
    }
}
