//! INI run configuration shared by every pipeline stage.
//!
//! Required sections: `[countries] [products] [schemes] [metrics] [specs]
//! [outputs]`. Optional: `[run] [weather] [geo] [survey] [battery]`.
//! Per-country and per-product keys are prefixed with the name, e.g.
//! `eth.origin = 38.0,9.5` under `[countries]`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use ini::Ini;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::battery::{BatteryConfig, ComboBlock, GroupBy, SignificanceRule};
use crate::econometrics::SpecKind;
use crate::extract::{ObfuscationScheme, OffsetConfig};
use crate::grid::{ProductSpec, RainParams, TempParams, VariableKind};
use crate::metrics::{Family, GddBounds, MetricId, SeasonWindow};
use crate::survey::{Outcome, SynthSurveyConfig};

pub const REQUIRED_SECTIONS: [&str; 6] = ["countries", "products", "schemes", "metrics", "specs", "outputs"];

/// Environment variable overriding the battery thread count.
pub const THREADS_ENV: &str = "AGW_THREADS";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("missing section [{0}]")]
    MissingSection(String),
    #[error("[{section}] {key}: {message}")]
    InvalidKey { section: String, key: String, message: String },
    #[error("malformed override {0:?}, expected section.key=VALUE")]
    BadOverride(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

fn invalid(section: &str, key: &str, message: impl Display) -> ConfigError {
    ConfigError::InvalidKey { section: section.into(), key: key.into(), message: message.to_string() }
}

/// Raw key/value view over the INI file with overrides applied.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Read { path: "<string>".into(), message: e.to_string() })?;
        Ok(Self::from_ini(&ini))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let ini = Ini::load_from_file(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        Ok(Self::from_ini(&ini))
    }

    fn from_ini(ini: &Ini) -> Self {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (sec, props) in ini.iter() {
            let Some(sec) = sec else { continue };
            let entry = sections.entry(sec.trim().to_string()).or_default();
            for (k, v) in props.iter() {
                entry.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Self { sections }
    }

    /// Apply `section.key=VALUE`.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (lhs, value) = spec.split_once('=').ok_or_else(|| ConfigError::BadOverride(spec.into()))?;
        let (section, key) = lhs.trim().split_once('.').ok_or_else(|| ConfigError::BadOverride(spec.into()))?;
        if section.is_empty() || key.is_empty() {
            return Err(ConfigError::BadOverride(spec.into()));
        }
        self.set(section, key, value.trim());
        Ok(())
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) {
        self.sections.entry(section.to_string()).or_default().insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    /// SHA-256 over a canonical rendering (sorted sections and keys).
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (sec, props) in &self.sections {
            h.update(format!("[{sec}]\n"));
            for (k, v) in props {
                h.update(format!("{k}={v}\n"));
            }
        }
        hex::encode(h.finalize())
    }

    fn parsed<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| invalid(section, key, format!("{v:?}: {e}"))),
        }
    }

    fn list(&self, section: &str, key: &str) -> Option<Vec<String>> {
        self.get(section, key).map(split_list)
    }

    fn required_list(&self, section: &str, key: &str) -> Result<Vec<String>> {
        let v = self.list(section, key).ok_or_else(|| invalid(section, key, "required key missing"))?;
        if v.is_empty() {
            return Err(invalid(section, key, "list is empty"));
        }
        Ok(v)
    }
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(str::to_string).collect()
}

fn parse_each<T>(section: &str, key: &str, items: &[String], f: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    items.iter().map(|s| f(s).ok_or_else(|| invalid(section, key, format!("unknown value {s:?}")))).collect()
}

fn pair(section: &str, key: &str, v: &str) -> Result<(f64, f64)> {
    let parts: Vec<f64> = split_list(v)
        .iter()
        .map(|x| x.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| invalid(section, key, e))?;
    match parts[..] {
        [a, b] => Ok((a, b)),
        _ => Err(invalid(section, key, format!("expected two numbers, got {v:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountryConfig {
    pub name: String,
    /// North-west corner of the country grid.
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub season: SeasonWindow,
    /// Day of year of peak wet-day probability; the `[weather]` value when unset.
    pub rain_peak_doy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductConfig {
    pub spec: ProductSpec,
    pub bias: f64,
    pub noise_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherSettings {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub cell_size: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    pub correlation_length_km: f64,
    pub rain: RainParams,
    pub temp: TempParams,
}

impl WeatherSettings {
    pub fn n_days(&self) -> usize {
        (self.end - self.start).num_days() as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoSettings {
    pub households: usize,
    pub households_per_ea: usize,
    /// Admin units per side of the country grid.
    pub admin_blocks: usize,
    pub urban_share: f64,
    /// Spread of households around their EA centre.
    pub scatter_km: f64,
    /// Distance kept between EA centres and the grid edge.
    pub margin_deg: f64,
    pub buffer_radius_km: f64,
    pub offsets: OffsetConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveySettings {
    pub dgp: SynthSurveyConfig,
    /// Product and scheme whose metric values drive the planted outcome.
    pub truth_product: String,
    pub truth_scheme: ObfuscationScheme,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurveFilter {
    pub country: Option<String>,
    pub family: Option<String>,
    pub outcome: Option<Outcome>,
    pub spec: Option<SpecKind>,
    pub scheme: Option<ObfuscationScheme>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSettings {
    pub dir: PathBuf,
    pub share_group_by: Vec<GroupBy>,
    pub r2_group_by: GroupBy,
    pub levels: Vec<f64>,
    pub curve: CurveFilter,
    pub rain_reference: MetricId,
    pub temp_reference: MetricId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub countries: Vec<CountryConfig>,
    pub rain_products: Vec<ProductConfig>,
    pub temp_products: Vec<ProductConfig>,
    pub schemes: Vec<ObfuscationScheme>,
    pub metrics: Vec<MetricId>,
    pub specs: Vec<SpecKind>,
    pub outcomes: Vec<Outcome>,
    pub combos: Vec<ComboBlock>,
    pub threads: usize,
    pub rule: SignificanceRule,
    pub gdd: GddBounds,
    pub weather: WeatherSettings,
    pub geo: GeoSettings,
    pub survey: SurveySettings,
    pub outputs: OutputSettings,
    pub hash: String,
}

impl Config {
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let mut raw = RawConfig::load(path)?;
        for o in overrides {
            raw.apply_override(o)?;
        }
        Self::from_raw(&raw)
    }

    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        for s in REQUIRED_SECTIONS {
            if !raw.has_section(s) {
                return Err(ConfigError::MissingSection(s.into()));
            }
        }
        let seed = raw.parsed("run", "seed", 1u64)?;
        let default_season: SeasonWindow = raw.parsed("countries", "season", SeasonWindow::new(6, 1, 9, 30).expect("valid"))?;
        let countries = raw
            .required_list("countries", "names")?
            .into_iter()
            .map(|name| {
                let key = format!("{name}.origin");
                let origin = raw.get("countries", &key).ok_or_else(|| invalid("countries", &key, "required key missing"))?;
                let (origin_lon, origin_lat) = pair("countries", &key, origin)?;
                let season = raw.parsed("countries", &format!("{name}.season"), default_season)?;
                let peak_key = format!("{name}.rain_peak_doy");
                let rain_peak_doy = raw.get("countries", &peak_key).map(|v| v.parse().map_err(|e| invalid("countries", &peak_key, e))).transpose()?;
                Ok(CountryConfig { name, origin_lon, origin_lat, season, rain_peak_doy })
            })
            .collect::<Result<Vec<_>>>()?;

        let default_noise = raw.parsed("weather", "product_noise_weight", 0.3)?;
        let product = |id: &str, family: Family, key: &str| -> Result<ProductConfig> {
            let spec = ProductSpec::catalogue()
                .into_iter()
                .find(|p| p.product_id == id)
                .ok_or_else(|| invalid("products", key, format!("unknown product {id:?}")))?;
            let is_rain = spec.variable_kind == VariableKind::Rainfall;
            if is_rain != (family == Family::Rain) {
                return Err(invalid("products", key, format!("{id} is not a {family} product")));
            }
            let bias = raw.parsed("products", &format!("{id}.bias"), if is_rain { 1.0 } else { 0.0 })?;
            let noise_weight = raw.parsed("products", &format!("{id}.noise"), default_noise)?;
            if is_rain && !(bias > 0.0) {
                return Err(invalid("products", &format!("{id}.bias"), "rainfall bias must be > 0"));
            }
            if !(0.0..=1.0).contains(&noise_weight) {
                return Err(invalid("products", &format!("{id}.noise"), "must lie in [0, 1]"));
            }
            Ok(ProductConfig { spec, bias, noise_weight })
        };
        let rain_products = raw
            .list("products", "rain")
            .unwrap_or_default()
            .iter()
            .map(|p| product(p, Family::Rain, "rain"))
            .collect::<Result<Vec<_>>>()?;
        let temp_products = raw
            .list("products", "temp")
            .unwrap_or_default()
            .iter()
            .map(|p| product(p, Family::Temp, "temp"))
            .collect::<Result<Vec<_>>>()?;
        if rain_products.is_empty() && temp_products.is_empty() {
            return Err(invalid("products", "rain", "no rain or temp products listed"));
        }

        let schemes = {
            let items = raw.required_list("schemes", "use")?;
            if items == ["all"] {
                ObfuscationScheme::ALL.to_vec()
            } else {
                parse_each("schemes", "use", &items, |s| s.parse().ok())?
            }
        };
        let metrics = {
            let items = raw.required_list("metrics", "use")?;
            match items.iter().map(String::as_str).collect::<Vec<_>>()[..] {
                ["all"] => MetricId::ALL.to_vec(),
                ["rain"] => MetricId::of_family(Family::Rain).collect(),
                ["temp"] => MetricId::of_family(Family::Temp).collect(),
                _ => parse_each("metrics", "use", &items, |s| s.parse().ok())?,
            }
        };
        for m in &metrics {
            let have = match m.family() {
                Family::Rain => !rain_products.is_empty(),
                Family::Temp => !temp_products.is_empty(),
            };
            if !have {
                return Err(invalid("metrics", "use", format!("{m} needs a {} product", m.family())));
            }
        }
        let specs = {
            let items = raw.required_list("specs", "use")?;
            if items == ["all"] {
                SpecKind::ALL.to_vec()
            } else {
                parse_each("specs", "use", &items, SpecKind::parse)?
            }
        };
        let outcomes = match raw.list("battery", "outcomes") {
            None => Outcome::ALL.to_vec(),
            Some(items) if items.is_empty() => return Err(invalid("battery", "outcomes", "list is empty")),
            Some(items) => parse_each("battery", "outcomes", &items, Outcome::parse)?,
        };
        let combos = match raw.list("battery", "combos") {
            None => vec![],
            Some(items) => match items.iter().map(String::as_str).collect::<Vec<_>>()[..] {
                [] | ["none"] => vec![],
                ["all"] => ComboBlock::ALL.to_vec(),
                _ => parse_each("battery", "combos", &items, |s| s.parse().ok())?,
            },
        };
        if !combos.is_empty() && (rain_products.is_empty() || temp_products.is_empty()) {
            return Err(invalid("battery", "combos", "combinations need both rain and temp products"));
        }
        let mut threads = raw.parsed("battery", "threads", 0usize)?;
        if let Ok(v) = std::env::var(THREADS_ENV) {
            threads = v.trim().parse().map_err(|_| invalid("env", THREADS_ENV, format!("{v:?} is not a thread count")))?;
        }
        let rule = raw.parsed("battery", "significance_rule", SignificanceRule::Joint)?;

        let gdd = GddBounds {
            low_c: raw.parsed("metrics", "gdd_low_c", GddBounds::default().low_c)?,
            high_c: raw.parsed("metrics", "gdd_high_c", GddBounds::default().high_c)?,
        };
        if !(gdd.low_c <= gdd.high_c) {
            return Err(invalid("metrics", "gdd_low_c", "must not exceed gdd_high_c"));
        }

        let weather = parse_weather(raw)?;
        let geo = parse_geo(raw)?;
        let survey = parse_survey(raw, seed, &rain_products, &temp_products)?;

        let outputs = OutputSettings {
            dir: PathBuf::from(raw.get("outputs", "dir").unwrap_or("out")),
            share_group_by: match raw.list("outputs", "share_group_by") {
                None => vec![GroupBy::Scheme],
                Some(items) => parse_each("outputs", "share_group_by", &items, |s| s.parse().ok())?,
            },
            r2_group_by: raw.parsed("outputs", "r2_group_by", GroupBy::Scheme)?,
            levels: match raw.list("outputs", "levels") {
                None => crate::battery::SIGNIFICANCE_LEVELS.to_vec(),
                Some(items) => parse_each("outputs", "levels", &items, |s| s.parse().ok().filter(|l: &f64| *l > 0.0 && *l < 1.0))?,
            },
            curve: CurveFilter {
                country: raw.get("outputs", "curve_country").map(str::to_string),
                family: raw.get("outputs", "curve_family").map(str::to_string),
                outcome: raw
                    .get("outputs", "curve_outcome")
                    .map(|s| Outcome::parse(s).ok_or_else(|| invalid("outputs", "curve_outcome", format!("unknown outcome {s:?}"))))
                    .transpose()?,
                spec: raw
                    .get("outputs", "curve_spec")
                    .map(|s| SpecKind::parse(s).ok_or_else(|| invalid("outputs", "curve_spec", format!("unknown spec {s:?}"))))
                    .transpose()?,
                scheme: raw
                    .get("outputs", "curve_scheme")
                    .map(|s| s.parse().map_err(|_| invalid("outputs", "curve_scheme", format!("unknown scheme {s:?}"))))
                    .transpose()?,
            },
            rain_reference: raw.parsed("outputs", "rain_reference", MetricId::RainMean)?,
            temp_reference: raw.parsed("outputs", "temp_reference", MetricId::TempMean)?,
        };
        if outputs.rain_reference.family() != Family::Rain || outputs.temp_reference.family() != Family::Temp {
            return Err(invalid("outputs", "rain_reference", "references must be a rain and a temp metric"));
        }

        Ok(Self {
            seed,
            countries,
            rain_products,
            temp_products,
            schemes,
            metrics,
            specs,
            outcomes,
            combos,
            threads,
            rule,
            gdd,
            weather,
            geo,
            survey,
            outputs,
            hash: raw.hash(),
        })
    }

    pub fn battery_config(&self) -> BatteryConfig {
        BatteryConfig {
            countries: self.countries.iter().map(|c| c.name.clone()).collect(),
            rain_products: self.rain_products.iter().map(|p| p.spec.product_id.clone()).collect(),
            temp_products: self.temp_products.iter().map(|p| p.spec.product_id.clone()).collect(),
            schemes: self.schemes.clone(),
            metrics: self.metrics.clone(),
            outcomes: self.outcomes.clone(),
            specs: self.specs.clone(),
            combos: self.combos.clone(),
            threads: self.threads,
            rule: self.rule,
            seed: self.seed,
        }
    }

    /// Metrics to compute: the configured ones plus those the combination
    /// blocks need, in catalogue order.
    pub fn computed_metrics(&self) -> Vec<MetricId> {
        let extra: Vec<MetricId> = self.combos.iter().flat_map(|b| b.metrics()).collect();
        MetricId::ALL.into_iter().filter(|m| self.metrics.contains(m) || extra.contains(m)).collect()
    }

    pub fn products(&self) -> impl Iterator<Item = &ProductConfig> {
        self.rain_products.iter().chain(&self.temp_products)
    }

    pub fn country(&self, name: &str) -> Option<&CountryConfig> {
        self.countries.iter().find(|c| c.name == name)
    }
}

fn parse_weather(raw: &RawConfig) -> Result<WeatherSettings> {
    let s = "weather";
    let date = |key: &str, default: &str| -> Result<NaiveDate> {
        let v = raw.get(s, key).unwrap_or(default);
        NaiveDate::parse_from_str(v, "%Y-%m-%d").map_err(|e| invalid(s, key, format!("{v:?}: {e}")))
    };
    let start = date("start", "1983-01-01")?;
    let end = date("end", "2016-12-31")?;
    if end < start {
        return Err(invalid(s, "end", "precedes start"));
    }
    let dr = RainParams::default();
    let dt = TempParams::default();
    let w = WeatherSettings {
        start,
        end,
        cell_size: raw.parsed(s, "cell_size", 0.1)?,
        n_rows: raw.parsed(s, "n_rows", 12)?,
        n_cols: raw.parsed(s, "n_cols", 12)?,
        correlation_length_km: raw.parsed(s, "correlation_length_km", 50.0)?,
        rain: RainParams {
            gamma_shape: raw.parsed(s, "gamma_shape", dr.gamma_shape)?,
            gamma_scale: raw.parsed(s, "gamma_scale", dr.gamma_scale)?,
            wet_prob_mean: raw.parsed(s, "wet_prob_mean", dr.wet_prob_mean)?,
            wet_prob_amplitude: raw.parsed(s, "wet_prob_amplitude", dr.wet_prob_amplitude)?,
            peak_day_of_year: raw.parsed(s, "rain_peak_doy", dr.peak_day_of_year)?,
        },
        temp: TempParams {
            annual_mean_c: raw.parsed(s, "temp_mean_c", dt.annual_mean_c)?,
            annual_amplitude_c: raw.parsed(s, "temp_amplitude_c", dt.annual_amplitude_c)?,
            peak_day_of_year: raw.parsed(s, "temp_peak_doy", dt.peak_day_of_year)?,
            noise_sd_c: raw.parsed(s, "temp_noise_sd_c", dt.noise_sd_c)?,
            diurnal_half_range_c: raw.parsed(s, "diurnal_half_range_c", dt.diurnal_half_range_c)?,
        },
    };
    if !(w.cell_size > 0.0) {
        return Err(invalid(s, "cell_size", "must be > 0"));
    }
    if w.n_rows == 0 || w.n_cols == 0 {
        return Err(invalid(s, "n_rows", "grid dimensions must be positive"));
    }
    if !(w.correlation_length_km > 0.0) {
        return Err(invalid(s, "correlation_length_km", "must be > 0"));
    }
    Ok(w)
}

fn parse_geo(raw: &RawConfig) -> Result<GeoSettings> {
    let s = "geo";
    let d = OffsetConfig::default();
    let g = GeoSettings {
        households: raw.parsed(s, "households", 500)?,
        households_per_ea: raw.parsed(s, "households_per_ea", 10)?,
        admin_blocks: raw.parsed(s, "admin_blocks", 4)?,
        urban_share: raw.parsed(s, "urban_share", 0.2)?,
        scatter_km: raw.parsed(s, "scatter_km", 2.0)?,
        margin_deg: raw.parsed(s, "margin_deg", 0.25)?,
        buffer_radius_km: raw.parsed(s, "buffer_radius_km", 10.0)?,
        offsets: OffsetConfig {
            urban_km: raw.parsed(s, "urban_offset_km", d.urban_km)?,
            rural_km: raw.parsed(s, "rural_offset_km", d.rural_km)?,
            rural_far_km: raw.parsed(s, "rural_far_offset_km", d.rural_far_km)?,
            rural_far_prob: raw.parsed(s, "rural_far_prob", d.rural_far_prob)?,
        },
    };
    if g.households == 0 {
        return Err(invalid(s, "households", "must be > 0"));
    }
    if g.households_per_ea == 0 {
        return Err(invalid(s, "households_per_ea", "must be > 0"));
    }
    if g.admin_blocks == 0 {
        return Err(invalid(s, "admin_blocks", "must be > 0"));
    }
    if !(0.0..=1.0).contains(&g.urban_share) {
        return Err(invalid(s, "urban_share", "must lie in [0, 1]"));
    }
    if !(g.buffer_radius_km > 0.0) {
        return Err(invalid(s, "buffer_radius_km", "must be > 0"));
    }
    if !(0.0..=1.0).contains(&g.offsets.rural_far_prob) {
        return Err(invalid(s, "rural_far_prob", "must lie in [0, 1]"));
    }
    Ok(g)
}

fn parse_survey(raw: &RawConfig, seed: u64, rain: &[ProductConfig], temp: &[ProductConfig]) -> Result<SurveySettings> {
    let s = "survey";
    let d = SynthSurveyConfig::default();
    let floats = |key: &str, default: Vec<f64>| -> Result<Vec<f64>> {
        match raw.list(s, key) {
            None => Ok(default),
            Some(items) => items.iter().map(|x| x.parse::<f64>().map_err(|e| invalid(s, key, e))).collect(),
        }
    };
    let years = match raw.list(s, "years") {
        None => d.years.clone(),
        Some(items) => items.iter().map(|x| x.parse::<i32>().map_err(|e| invalid(s, "years", e))).collect::<Result<_>>()?,
    };
    let input_effects = floats("input_effects", d.input_effects.to_vec())?;
    let input_effects: [f64; 6] =
        input_effects.try_into().map_err(|_| invalid(s, "input_effects", "expected six values"))?;
    let dgp = SynthSurveyConfig {
        years,
        metric: raw.parsed(s, "metric", d.metric)?,
        beta: raw.parsed(s, "beta", d.beta)?,
        beta_quadratic: raw.parsed(s, "beta_quadratic", d.beta_quadratic)?,
        input_effects,
        yield_intercept: raw.parsed(s, "yield_intercept", d.yield_intercept)?,
        value_intercept: raw.parsed(s, "value_intercept", d.value_intercept)?,
        household_effect_sd: raw.parsed(s, "household_effect_sd", d.household_effect_sd)?,
        year_effects: floats("year_effects", d.year_effects.clone())?,
        noise_sd: raw.parsed(s, "noise_sd", d.noise_sd)?,
        mover_share: raw.parsed(s, "mover_share", d.mover_share)?,
        seed,
    };
    dgp.validate().map_err(|e| invalid(s, "years", e))?;
    let family_products = match dgp.metric.family() {
        Family::Rain => rain,
        Family::Temp => temp,
    };
    let truth_product = match raw.get(s, "truth_product") {
        Some(p) => p.to_string(),
        None => family_products
            .first()
            .map(|p| p.spec.product_id.clone())
            .ok_or_else(|| invalid(s, "metric", format!("no {} product for {}", dgp.metric.family(), dgp.metric)))?,
    };
    if !family_products.iter().any(|p| p.spec.product_id == truth_product) {
        return Err(invalid(s, "truth_product", format!("{truth_product} is not a configured {} product", dgp.metric.family())));
    }
    let truth_scheme = raw.parsed(s, "truth_scheme", ObfuscationScheme::HhBilinear)?;
    Ok(SurveySettings { dgp, truth_product, truth_scheme })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
[countries]
names = eth
eth.origin = 38.0,9.5
[products]
rain = chirps
temp = era5_t
[schemes]
use = all
[metrics]
use = rain_total,temp_mean
[specs]
use = 1,3
[outputs]
dir = out
";

    #[test]
    fn minimal_config() {
        let c = Config::from_raw(&RawConfig::parse(MINIMAL).unwrap()).unwrap();
        assert_eq!(c.schemes.len(), 10);
        assert_eq!(c.specs, vec![SpecKind::LinearPooled, SpecKind::LinearFeControls]);
        assert_eq!(c.countries[0].season.to_string(), "06-01..09-30");
        assert_eq!(c.survey.truth_product, "chirps");
    }

    #[test]
    fn missing_section_named() {
        let text = MINIMAL.replace("[metrics]\nuse = rain_total,temp_mean\n", "");
        let e = Config::from_raw(&RawConfig::parse(&text).unwrap()).unwrap_err();
        assert_eq!(e, ConfigError::MissingSection("metrics".into()));
        assert!(e.to_string().contains("[metrics]"));
    }

    #[test]
    fn overrides_and_hash() {
        let mut raw = RawConfig::parse(MINIMAL).unwrap();
        let h0 = raw.hash();
        assert_eq!(h0, RawConfig::parse(MINIMAL).unwrap().hash());
        raw.apply_override("schemes.use=3").unwrap();
        raw.apply_override("countries.eth.season=05-01..08-31").unwrap();
        assert_ne!(raw.hash(), h0);
        let c = Config::from_raw(&raw).unwrap();
        assert_eq!(c.schemes, vec![ObfuscationScheme::ModEaSimple]);
        assert_eq!(c.countries[0].season, SeasonWindow::new(5, 1, 8, 31).unwrap());
        assert!(matches!(raw.apply_override("novalue"), Err(ConfigError::BadOverride(_))));
    }

    #[test]
    fn bad_values_name_key() {
        let mut raw = RawConfig::parse(MINIMAL).unwrap();
        raw.apply_override("metrics.use=rain_totl").unwrap();
        let e = Config::from_raw(&raw).unwrap_err().to_string();
        assert!(e.contains("[metrics] use"), "{e}");
        let mut raw = RawConfig::parse(MINIMAL).unwrap();
        raw.apply_override("products.rain=era5_t").unwrap();
        assert!(Config::from_raw(&raw).unwrap_err().to_string().contains("[products] rain"));
    }
}
