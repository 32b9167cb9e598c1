//! Pipeline stages, from synthetic weather and geography through metrics,
//! the merged panel and the battery to summary tables.
//!
//! The in-memory builders (`build_world`, `world_metrics`, `world_survey`)
//! do the work; the stage functions wrap them with file I/O under one
//! output directory. Every file is written to a temporary sibling and
//! renamed into place.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::battery::{
    self, enumerate_runs, read_results_csv, run_battery, significance_shares, spec_curve_export, write_results_csv,
    BatteryError, GroupBy, MemoryProvider, MetricSel, ResultRow,
};
use crate::config::{Config, ConfigError, CountryConfig, GeoSettings, ProductConfig, WeatherSettings};
use crate::extract::{
    extract_feature, fnv1a, AdminUnit, DateRange, ExtractError, FeatureRef, GeoContext, HouseholdGeo, ObfuscationScheme,
    PointMethod, ZonePolygon,
};
use crate::geo::{destination, GeoPoint};
use crate::grid::{synth_weather, GridError, RainParams, RasterStack, SynthWeatherConfig, VariableKind};
use crate::metrics::{location_rain_metrics, location_temp_metrics, Family, GddBounds, MetricId, SeasonWindow};
use crate::survey::{
    load_survey_csv, merge_weather, read_metric_records, synth_survey, write_drops_csv, write_merged_csv,
    write_metric_records, write_survey_csv, HouseholdId, MetricColumn, MetricRecord, MetricTable, SurveyError, SurveyPanel,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing input {0}; run the stage that produces it first")]
    MissingInput(PathBuf),
    #[error("invalid input {path}: {message}")]
    InvalidInput { path: PathBuf, message: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Survey(#[from] SurveyError),
    #[error(transparent)]
    Battery(#[from] BatteryError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl PipelineError {
    /// 1 for configuration and input validation problems, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::MissingInput(_) | PipelineError::InvalidInput { .. } => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// File layout under the output directory.
#[derive(Debug, Clone)]
pub struct Paths {
    pub root: PathBuf,
}

impl Paths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn weather(&self, country: &str, product: &str) -> PathBuf {
        self.root.join("weather").join(country).join(format!("{product}.agwx"))
    }

    pub fn weather_max(&self, country: &str, product: &str) -> PathBuf {
        self.root.join("weather").join(country).join(format!("{product}_max.agwx"))
    }

    pub fn households(&self, country: &str) -> PathBuf {
        self.root.join("geo").join(country).join("households.csv")
    }

    pub fn admin(&self, country: &str) -> PathBuf {
        self.root.join("geo").join(country).join("admin.csv")
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn manifest(&self, command: Command) -> PathBuf {
        self.root.join(format!("manifest_{}.json", command.name()))
    }
}

/// Write `path` via a temporary file in the same directory and a rename.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        f(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(path).map_err(|e| PipelineError::Io(e.error))?;
    Ok(())
}

fn open_input(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => PipelineError::MissingInput(path.to_path_buf()),
        _ => PipelineError::Io(e),
    })
}

fn invalid_input(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::InvalidInput { path: path.to_path_buf(), message: e.to_string() }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    io::copy(&mut open_input(path)?, &mut h)?;
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdRecord {
    pub hh_id: String,
    pub ea_id: String,
    pub admin_id: String,
    pub lon: f64,
    pub lat: f64,
    pub urban: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdminRecord {
    pub admin_id: String,
    pub west: f64,
    pub south: f64,
    pub east: f64,
    pub north: f64,
    pub centroid_lon: f64,
    pub centroid_lat: f64,
}

/// Country grid extent as (west, south, east, north).
pub fn country_bounds(country: &CountryConfig, w: &WeatherSettings) -> (f64, f64, f64, f64) {
    let west = country.origin_lon;
    let north = country.origin_lat;
    (west, north - w.n_rows as f64 * w.cell_size, west + w.n_cols as f64 * w.cell_size, north)
}

/// Households clustered in EAs placed uniformly inside the country grid
/// (away from the edges), and a regular grid of rectangular admin units.
pub fn synth_geography(country: &CountryConfig, w: &WeatherSettings, g: &GeoSettings, seed: u64) -> (Vec<HouseholdGeo>, Vec<AdminUnit>) {
    let (west, south, east, north) = country_bounds(country, w);
    let k = g.admin_blocks;
    let (dx, dy) = ((east - west) / k as f64, (north - south) / k as f64);
    let admin_id = |i: usize, j: usize| format!("{}-a{i}{j}", country.name);
    let mut admins = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            let (n, wst) = (north - i as f64 * dy, west + j as f64 * dx);
            admins.push(AdminUnit {
                admin_id: admin_id(i, j),
                west: wst,
                south: n - dy,
                east: wst + dx,
                north: n,
                centroid: GeoPoint::new(wst + dx / 2.0, n - dy / 2.0),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(format!("geo/{}", country.name).as_bytes()));
    let span = |lo: f64, hi: f64| {
        let m = g.margin_deg.min((hi - lo) / 2.0);
        (lo + m, hi - m)
    };
    let (lon_lo, lon_hi) = span(west, east);
    let (lat_lo, lat_hi) = span(south, north);
    let n_ea = g.households.div_ceil(g.households_per_ea);
    let mut households = Vec::with_capacity(g.households);
    for e in 0..n_ea {
        let center = GeoPoint::new(
            if lon_hi > lon_lo { rng.gen_range(lon_lo..lon_hi) } else { lon_lo },
            if lat_hi > lat_lo { rng.gen_range(lat_lo..lat_hi) } else { lat_lo },
        );
        let urban = rng.gen::<f64>() < g.urban_share;
        let i = (((north - center.lat) / dy) as usize).min(k - 1);
        let j = (((center.lon - west) / dx) as usize).min(k - 1);
        let members = g.households_per_ea.min(g.households - households.len());
        for _ in 0..members {
            let bearing = rng.gen_range(0.0..std::f64::consts::TAU);
            let dist = if g.scatter_km > 0.0 { rng.gen_range(0.0..g.scatter_km) } else { 0.0 };
            households.push(HouseholdGeo {
                hh_id: format!("{}-h{:04}", country.name, households.len() + 1),
                ea_id: format!("{}-e{:03}", country.name, e + 1),
                admin_id: admin_id(i, j),
                location: destination(center, bearing, dist),
                urban,
            });
        }
    }
    (households, admins)
}

fn family_name(kind: VariableKind) -> &'static str {
    match kind {
        VariableKind::Rainfall => "rain",
        VariableKind::TempMean | VariableKind::TempMax => "temp",
    }
}

/// Generator settings for one product over one country. Products of a
/// family share the country's truth field and differ by their own noise
/// field and bias.
pub fn product_weather_config(country: &CountryConfig, product: &ProductConfig, w: &WeatherSettings, kind: VariableKind, seed: u64) -> SynthWeatherConfig {
    SynthWeatherConfig {
        variable_kind: kind,
        product_id: product.spec.product_id.clone(),
        origin_lon: country.origin_lon,
        origin_lat: country.origin_lat,
        cell_size_lon: w.cell_size,
        cell_size_lat: w.cell_size,
        n_rows: w.n_rows,
        n_cols: w.n_cols,
        start_date: w.start,
        n_days: w.n_days(),
        rain: RainParams { peak_day_of_year: country.rain_peak_doy.unwrap_or(w.rain.peak_day_of_year), ..w.rain.clone() },
        temp: w.temp.clone(),
        correlation_length_km: w.correlation_length_km,
        seed: seed ^ fnv1a(format!("truth/{}/{}", country.name, family_name(kind)).as_bytes()),
        product_seed: seed ^ fnv1a(format!("product/{}/{}", country.name, product.spec.product_id).as_bytes()),
        product_noise_weight: product.noise_weight,
        bias: product.bias,
    }
}

/// Daily stacks of one product; `max` only for products publishing a
/// daily maximum temperature.
#[derive(Debug, Clone)]
pub struct ProductStacks {
    pub main: RasterStack,
    pub max: Option<RasterStack>,
}

#[derive(Debug, Clone)]
pub struct CountryWorld {
    pub config: CountryConfig,
    pub households: Vec<HouseholdGeo>,
    pub admins: Vec<AdminUnit>,
    pub ctx: GeoContext,
    pub products: BTreeMap<String, ProductStacks>,
}

#[derive(Debug, Clone)]
pub struct World {
    pub countries: Vec<CountryWorld>,
}

pub fn geo_context(cfg: &Config, households: Vec<HouseholdGeo>, admins: Vec<AdminUnit>) -> Result<GeoContext> {
    Ok(GeoContext::build(households, admins, &cfg.geo.offsets, cfg.geo.buffer_radius_km, cfg.seed)?)
}

pub fn synth_product(cfg: &Config, country: &CountryConfig, product: &ProductConfig) -> Result<ProductStacks> {
    let kind = product.spec.variable_kind;
    let main = synth_weather(&product_weather_config(country, product, &cfg.weather, kind, cfg.seed))?;
    let max = if product.spec.provides_max {
        Some(synth_weather(&product_weather_config(country, product, &cfg.weather, VariableKind::TempMax, cfg.seed))?)
    } else {
        None
    };
    Ok(ProductStacks { main, max })
}

/// Synthetic weather and geography for every configured country.
pub fn build_world(cfg: &Config) -> Result<World> {
    let countries = cfg
        .countries
        .par_iter()
        .map(|c| {
            let (households, admins) = synth_geography(c, &cfg.weather, &cfg.geo, cfg.seed);
            let ctx = geo_context(cfg, households.clone(), admins.clone())?;
            let products = cfg
                .products()
                .collect::<Vec<_>>()
                .par_iter()
                .map(|p| Ok((p.spec.product_id.clone(), synth_product(cfg, c, p)?)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            Ok(CountryWorld { config: c.clone(), households, admins, ctx, products })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(World { countries })
}

/// A resolved feature, as stored in features.csv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub country: String,
    pub hh_id: String,
    pub scheme: String,
    /// point, circle or rectangle
    pub kind: String,
    /// simple or bilinear for points
    pub method: String,
    pub lon: Option<f64>,
    pub lat: Option<f64>,
    pub radius_km: Option<f64>,
    pub west: Option<f64>,
    pub south: Option<f64>,
    pub east: Option<f64>,
    pub north: Option<f64>,
}

impl FeatureRecord {
    pub fn new(country: &str, hh_id: &str, scheme: ObfuscationScheme, f: &FeatureRef) -> Self {
        let mut r = FeatureRecord {
            country: country.into(),
            hh_id: hh_id.into(),
            scheme: scheme.name().into(),
            kind: String::new(),
            method: String::new(),
            lon: None,
            lat: None,
            radius_km: None,
            west: None,
            south: None,
            east: None,
            north: None,
        };
        match f {
            FeatureRef::Point { point, method } => {
                r.kind = "point".into();
                r.method = match method {
                    PointMethod::Simple => "simple",
                    PointMethod::Bilinear => "bilinear",
                }
                .into();
                (r.lon, r.lat) = (Some(point.lon), Some(point.lat));
            }
            FeatureRef::Zone(ZonePolygon::Circle { center, radius_km }) => {
                r.kind = "circle".into();
                (r.lon, r.lat, r.radius_km) = (Some(center.lon), Some(center.lat), Some(*radius_km));
            }
            FeatureRef::Zone(ZonePolygon::Rectangle { west, south, east, north }) => {
                r.kind = "rectangle".into();
                (r.west, r.south, r.east, r.north) = (Some(*west), Some(*south), Some(*east), Some(*north));
            }
        }
        r
    }

    pub fn scheme(&self) -> std::result::Result<ObfuscationScheme, String> {
        self.scheme.parse().map_err(|_| format!("unknown scheme {:?}", self.scheme))
    }

    pub fn feature(&self) -> std::result::Result<FeatureRef, String> {
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| format!("{} feature of {} lacks {name}", self.kind, self.hh_id));
        match self.kind.as_str() {
            "point" => {
                let point = GeoPoint::new(need(self.lon, "lon")?, need(self.lat, "lat")?);
                let method = match self.method.as_str() {
                    "simple" => PointMethod::Simple,
                    "bilinear" => PointMethod::Bilinear,
                    m => return Err(format!("unknown point method {m:?}")),
                };
                Ok(FeatureRef::Point { point, method })
            }
            "circle" => {
                let c = GeoPoint::new(need(self.lon, "lon")?, need(self.lat, "lat")?);
                ZonePolygon::circle(c, need(self.radius_km, "radius_km")?).map(FeatureRef::Zone).map_err(|e| e.to_string())
            }
            "rectangle" => ZonePolygon::rectangle(
                need(self.west, "west")?,
                need(self.south, "south")?,
                need(self.east, "east")?,
                need(self.north, "north")?,
            )
            .map(FeatureRef::Zone)
            .map_err(|e| e.to_string()),
            k => Err(format!("unknown feature kind {k:?}")),
        }
    }
}

/// (hh_id, scheme, feature) for every household and scheme, in that order.
pub fn resolve_features(ctx: &GeoContext, schemes: &[ObfuscationScheme]) -> Result<Vec<(String, ObfuscationScheme, FeatureRef)>> {
    let mut out = Vec::new();
    for h in ctx.households() {
        for s in schemes {
            out.push((h.hh_id.clone(), *s, ctx.resolve_feature(*s, &h.hh_id)?));
        }
    }
    Ok(out)
}

/// Season metrics of one product at a set of features.
#[derive(Debug, Clone, Copy)]
pub struct MetricJob<'a> {
    pub country: &'a str,
    pub stacks: &'a ProductStacks,
    pub window: SeasonWindow,
    pub years: &'a [i32],
    pub gdd: GddBounds,
    pub metrics: &'a [MetricId],
}

type YearValues = Vec<Vec<(Option<f64>, bool)>>;

fn feature_values(job: &MetricJob, feature: &FeatureRef, metrics: &[MetricId]) -> Result<YearValues> {
    let main = &job.stacks.main;
    let range = DateRange::whole(main.header());
    let series = extract_feature(main, feature, range)?;
    let rows = match main.variable_kind() {
        VariableKind::Rainfall => location_rain_metrics(&series, &job.window, job.years)
            .into_iter()
            .map(|m| metrics.iter().map(|id| (m.as_ref().and_then(|m| m.get(*id)), false)).collect())
            .collect(),
        VariableKind::TempMean | VariableKind::TempMax => {
            let max = job.stacks.max.as_ref().map(|s| extract_feature(s, feature, DateRange::whole(s.header()))).transpose()?;
            location_temp_metrics(&series, max.as_ref(), &job.window, job.years, job.gdd)
                .into_iter()
                .map(|m| {
                    metrics
                        .iter()
                        .map(|id| (m.as_ref().and_then(|m| m.get(*id)), *id == MetricId::TempMaxAvg && m.as_ref().is_some_and(|m| m.tmax_proxy)))
                        .collect()
                })
                .collect()
        }
    };
    Ok(rows)
}

/// Metric records for `features`, ordered by feature, year, metric. Metrics
/// not of the stack's family are skipped. Identical features are computed
/// once.
pub fn metric_records(job: &MetricJob, features: &[(String, ObfuscationScheme, FeatureRef)]) -> Result<Vec<MetricRecord>> {
    let family = match job.stacks.main.variable_kind() {
        VariableKind::Rainfall => Family::Rain,
        _ => Family::Temp,
    };
    let metrics: Vec<MetricId> = job.metrics.iter().copied().filter(|m| m.family() == family).collect();
    if metrics.is_empty() {
        return Ok(vec![]);
    }
    let mut unique: BTreeMap<String, usize> = BTreeMap::new();
    let mut distinct: Vec<&FeatureRef> = Vec::new();
    let index: Vec<usize> = features
        .iter()
        .map(|(_, _, f)| {
            *unique.entry(format!("{f:?}")).or_insert_with(|| {
                distinct.push(f);
                distinct.len() - 1
            })
        })
        .collect();
    let values: Vec<YearValues> = distinct.par_iter().map(|f| feature_values(job, f, &metrics)).collect::<Result<_>>()?;
    let product = job.stacks.main.product_id();
    let mut out = Vec::with_capacity(features.len() * job.years.len() * metrics.len());
    for ((hh, scheme, _), &vi) in features.iter().zip(&index) {
        for (y, year) in job.years.iter().enumerate() {
            for (m, id) in metrics.iter().enumerate() {
                let (value, proxy) = values[vi][y][m];
                let value = value.filter(|v| v.is_finite());
                out.push(MetricRecord {
                    country: job.country.to_string(),
                    product_id: product.to_string(),
                    scheme: scheme.name().to_string(),
                    hh_id: hh.clone(),
                    year: *year,
                    metric_id: id.name().to_string(),
                    value,
                    missing_flag: u8::from(value.is_none()),
                    proxy_flag: u8::from(proxy),
                });
            }
        }
    }
    Ok(out)
}

/// All metric records of the configured products, schemes and metrics.
pub fn world_metrics(cfg: &Config, world: &World) -> Result<Vec<MetricRecord>> {
    let mut out = Vec::new();
    let metrics = cfg.computed_metrics();
    for c in &world.countries {
        let features = resolve_features(&c.ctx, &cfg.schemes)?;
        for (_, stacks) in &c.products {
            let job = MetricJob {
                country: &c.config.name,
                stacks,
                window: c.config.season,
                years: &cfg.survey.dgp.years,
                gdd: cfg.gdd,
                metrics: &metrics,
            };
            out.extend(metric_records(&job, &features)?);
        }
    }
    Ok(out)
}

/// Planted-effect survey panel of one country; the regressor is the
/// configured metric from the truth product under the truth scheme.
pub fn country_survey(cfg: &Config, c: &CountryWorld) -> Result<SurveyPanel> {
    let dgp = &cfg.survey.dgp;
    let stacks = c.products.get(&cfg.survey.truth_product).ok_or_else(|| {
        PipelineError::Config(ConfigError::InvalidKey {
            section: "survey".into(),
            key: "truth_product".into(),
            message: format!("{} not generated", cfg.survey.truth_product),
        })
    })?;
    let features = resolve_features(&c.ctx, &[cfg.survey.truth_scheme])?;
    let job = MetricJob { country: &c.config.name, stacks, window: c.config.season, years: &dgp.years, gdd: cfg.gdd, metrics: &[dgp.metric] };
    let weather: HashMap<(String, i32), f64> =
        metric_records(&job, &features)?.into_iter().map(|r| ((r.hh_id, r.year), r.value.unwrap_or(f64::NAN))).collect();
    let ids: Vec<HouseholdId> = c
        .households
        .iter()
        .map(|h| HouseholdId { country: c.config.name.clone(), hh_id: h.hh_id.clone(), ea_id: h.ea_id.clone(), admin_id: h.admin_id.clone() })
        .collect();
    Ok(synth_survey(dgp, &ids, &weather)?)
}

pub fn world_survey(cfg: &Config, world: &World) -> Result<SurveyPanel> {
    let mut rows = Vec::new();
    for c in &world.countries {
        rows.extend(country_survey(cfg, c)?.rows);
    }
    Ok(SurveyPanel { rows })
}

/// Every (product, scheme, metric) column the configuration asks for.
pub fn configured_columns(cfg: &Config) -> Vec<MetricColumn> {
    let mut cols = Vec::new();
    for p in cfg.products() {
        let fam = if p.spec.variable_kind == VariableKind::Rainfall { Family::Rain } else { Family::Temp };
        for s in &cfg.schemes {
            for m in cfg.computed_metrics().into_iter().filter(|m| m.family() == fam) {
                cols.push(MetricColumn::new(&p.spec.product_id, *s, m));
            }
        }
    }
    cols
}

/// Results of the battery over an in-memory survey and metric table.
pub fn battery_results(cfg: &Config, survey: &SurveyPanel, table: &MetricTable, threads: usize) -> Result<Vec<ResultRow>> {
    let keys = enumerate_runs(&cfg.battery_config())?;
    let provider = MemoryProvider { survey, metrics: table };
    Ok(run_battery(&keys, &provider, threads)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Command {
    SynthWeather,
    SynthSurvey,
    Extract,
    Metrics,
    Merge,
    Battery,
    Summarize,
    SpecCurve,
    DiffTest,
}

impl Command {
    /// Pipeline order.
    pub const ALL: [Command; 9] = [
        Command::SynthWeather,
        Command::SynthSurvey,
        Command::Extract,
        Command::Metrics,
        Command::Merge,
        Command::Battery,
        Command::Summarize,
        Command::SpecCurve,
        Command::DiffTest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::SynthWeather => "synth-weather",
            Command::SynthSurvey => "synth-survey",
            Command::Extract => "extract",
            Command::Metrics => "metrics",
            Command::Merge => "merge",
            Command::Battery => "battery",
            Command::Summarize => "summarize",
            Command::SpecCurve => "spec-curve",
            Command::DiffTest => "diff-test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub timings: Vec<StageTiming>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Default)]
struct Stage {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    timings: Vec<StageTiming>,
    started: Option<(String, Instant)>,
    quiet: bool,
}

impl Stage {
    fn step(&mut self, name: &str) {
        self.finish_step();
        if !self.quiet {
            eprintln!("  {name}");
        }
        self.started = Some((name.to_string(), Instant::now()));
    }

    fn finish_step(&mut self) {
        if let Some((name, t)) = self.started.take() {
            self.timings.push(StageTiming { stage: name, seconds: t.elapsed().as_secs_f64() });
        }
    }

    fn input(&mut self, p: &Path) -> PathBuf {
        self.inputs.push(p.to_path_buf());
        p.to_path_buf()
    }

    fn output(&mut self, p: PathBuf) -> PathBuf {
        self.outputs.push(p.clone());
        p
    }
}

fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, |w| {
        let mut cw = csv::Writer::from_writer(w);
        for r in rows {
            cw.serialize(r)?;
        }
        cw.flush()?;
        Ok(())
    })
}

fn read_csv_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rd = csv::Reader::from_reader(open_input(path)?);
    rd.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| invalid_input(path, e))
}

fn load_stack(path: &Path) -> Result<RasterStack> {
    let mut bytes = Vec::new();
    io::Read::read_to_end(&mut open_input(path)?, &mut bytes)?;
    RasterStack::from_bytes(&bytes).map_err(|e| invalid_input(path, e))
}

fn load_geo(cfg: &Config, paths: &Paths, country: &str, st: &mut Stage) -> Result<(Vec<HouseholdGeo>, GeoContext)> {
    let hp = st.input(&paths.households(country));
    let ap = st.input(&paths.admin(country));
    let households: Vec<HouseholdGeo> = read_csv_rows::<HouseholdRecord>(&hp)?
        .into_iter()
        .map(|r| HouseholdGeo { hh_id: r.hh_id, ea_id: r.ea_id, admin_id: r.admin_id, location: GeoPoint::new(r.lon, r.lat), urban: r.urban == 1 })
        .collect();
    let admins: Vec<AdminUnit> = read_csv_rows::<AdminRecord>(&ap)?
        .into_iter()
        .map(|a| AdminUnit {
            admin_id: a.admin_id,
            west: a.west,
            south: a.south,
            east: a.east,
            north: a.north,
            centroid: GeoPoint::new(a.centroid_lon, a.centroid_lat),
        })
        .collect();
    let ctx = geo_context(cfg, households.clone(), admins).map_err(|e| invalid_input(&hp, e))?;
    Ok((households, ctx))
}

fn load_product(paths: &Paths, country: &str, p: &ProductConfig, st: &mut Stage) -> Result<ProductStacks> {
    let main = load_stack(&st.input(&paths.weather(country, &p.spec.product_id)))?;
    let max = if p.spec.provides_max {
        Some(load_stack(&st.input(&paths.weather_max(country, &p.spec.product_id)))?)
    } else {
        None
    };
    Ok(ProductStacks { main, max })
}

/// Load weather and geography written by `synth-weather`.
pub fn load_world(cfg: &Config, paths: &Paths) -> Result<World> {
    let mut st = Stage { quiet: true, ..Default::default() };
    load_world_tracked(cfg, paths, &mut st)
}

fn load_world_tracked(cfg: &Config, paths: &Paths, st: &mut Stage) -> Result<World> {
    let mut countries = Vec::new();
    for c in &cfg.countries {
        let (households, ctx) = load_geo(cfg, paths, &c.name, st)?;
        let admins = ctx.admins().cloned().collect();
        let mut products = BTreeMap::new();
        for p in cfg.products() {
            products.insert(p.spec.product_id.clone(), load_product(paths, &c.name, p, st)?);
        }
        countries.push(CountryWorld { config: c.clone(), households, admins, ctx, products });
    }
    Ok(World { countries })
}

fn load_metric_table(path: &Path) -> Result<MetricTable> {
    let records = read_metric_records(open_input(path)?).map_err(|e| invalid_input(path, e))?;
    MetricTable::from_records(records).map_err(|e| invalid_input(path, e))
}

fn load_survey(path: &Path) -> Result<SurveyPanel> {
    if !path.exists() {
        return Err(PipelineError::MissingInput(path.to_path_buf()));
    }
    load_survey_csv(path).map(|(p, _)| p).map_err(|e| invalid_input(path, e))
}

fn load_results(path: &Path) -> Result<Vec<ResultRow>> {
    read_results_csv(open_input(path)?).map_err(|e| invalid_input(path, e))
}

fn stage_synth_weather(cfg: &Config, paths: &Paths, st: &mut Stage) -> Result<()> {
    st.step("generate");
    let world = build_world(cfg)?;
    st.step("write");
    for c in &world.countries {
        let name = &c.config.name;
        let hh: Vec<HouseholdRecord> = c
            .households
            .iter()
            .map(|h| HouseholdRecord {
                hh_id: h.hh_id.clone(),
                ea_id: h.ea_id.clone(),
                admin_id: h.admin_id.clone(),
                lon: h.location.lon,
                lat: h.location.lat,
                urban: u8::from(h.urban),
            })
            .collect();
        write_csv_rows(&st.output(paths.households(name)), &hh)?;
        let admins: Vec<AdminRecord> = c
            .admins
            .iter()
            .map(|a| AdminRecord {
                admin_id: a.admin_id.clone(),
                west: a.west,
                south: a.south,
                east: a.east,
                north: a.north,
                centroid_lon: a.centroid.lon,
                centroid_lat: a.centroid.lat,
            })
            .collect();
        write_csv_rows(&st.output(paths.admin(name)), &admins)?;
        for (pid, s) in &c.products {
            let bytes = s.main.to_bytes();
            write_atomic(&st.output(paths.weather(name, pid)), |w| Ok(w.write_all(&bytes)?))?;
            if let Some(m) = &s.max {
                let bytes = m.to_bytes();
                write_atomic(&st.output(paths.weather_max(name, pid)), |w| Ok(w.write_all(&bytes)?))?;
            }
        }
    }
    Ok(())
}

fn stage_synth_survey(cfg: &Config, paths: &Paths, st: &mut Stage) -> Result<()> {
    st.step("load");
    let world = load_world_tracked(cfg, paths, st)?;
    st.step("generate");
    let panel = world_survey(cfg, &world)?;
    st.step("write");
    write_atomic(&st.output(paths.file("survey.csv")), |w| Ok(write_survey_csv(&panel, w)?))
}

fn stage_extract(cfg: &Config, paths: &Paths, st: &mut Stage) -> Result<()> {
    st.step("resolve");
    let mut records = Vec::new();
    for c in &cfg.countries {
        let (_, ctx) = load_geo(cfg, paths, &c.name, st)?;
        for (hh, s, f) in resolve_features(&ctx, &cfg.schemes)? {
            records.push(FeatureRecord::new(&c.name, &hh, s, &f));
        }
    }
    st.step("write");
    write_csv_rows(&st.output(paths.file("features.csv")), &records)
}

fn stage_metrics(cfg: &Config, paths: &Paths, st: &mut Stage) -> Result<()> {
    st.step("load");
    let fp = st.input(&paths.file("features.csv"));
    let features: Vec<FeatureRecord> = read_csv_rows(&fp)?;
    let mut by_country: BTreeMap<String, Vec<(String, ObfuscationScheme, FeatureRef)>> = BTreeMap::new();
    for r in &features {
        let scheme = r.scheme().map_err(|e| invalid_input(&fp, e))?;
        if !cfg.schemes.contains(&scheme) {
            continue;
        }
        by_country.entry(r.country.clone()).or_default().push((r.hh_id.clone(), scheme, r.feature().map_err(|e| invalid_input(&fp, e))?));
    }
    st.step("compute");
    let metrics = cfg.computed_metrics();
    let mut out = Vec::new();
    for c in &cfg.countries {
        let features = by_country.get(&c.name).ok_or_else(|| invalid_input(&fp, format!("no features for country {}", c.name)))?;
        for p in cfg.products() {
            let stacks = load_product(paths, &c.name, p, st)?;
            let job = MetricJob { country: &c.name, stacks: &stacks, window: c.season, years: &cfg.survey.dgp.years, gdd: cfg.gdd, metrics: &metrics };
            out.extend(metric_records(&job, features)?);
        }
    }
    st.step("write");
    write_atomic(&st.output(paths.file("metrics.csv")), |w| Ok(write_metric_records(&out, w)?))
}

fn stage_merge(cfg: &Config, paths: &Paths, st: &mut Stage) -> Result<()> {
    st.step("load");
    let survey = load_survey(&st.input(&paths.file("survey.csv")))?;
    let table = load_metric_table(&st.input(&paths.file("metrics.csv")))?;
    st.step("merge");
    let merged = merge_weather(&survey, &table, None, &configured_columns(cfg));
    st.step("write");
    write_atomic(&st.output(paths.file("merged.csv")), |w| Ok(write_merged_csv(&merged, w)?))?;
    write_atomic(&st.output(paths.file("drops.csv")), |w| Ok(write_drops_csv(&merged.drops, w)?))
}

fn stage_battery(cfg: &Config, paths: &Paths, st: &mut Stage) -> Result<()> {
    st.step("load");
    let survey = load_survey(&st.input(&paths.file("survey.csv")))?;
    let table = load_metric_table(&st.input(&paths.file("metrics.csv")))?;
    st.step("run");
    let rows = battery_results(cfg, &survey, &table, cfg.threads)?;
    if !st.quiet {
        let ok = rows.iter().filter(|r| r.is_ok()).count();
        eprintln!("  {} runs, {} ok", rows.len(), ok);
    }
    st.step("write");
    write_atomic(&st.output(paths.file("results.csv")), |w| Ok(write_results_csv(&rows, w)?))
}

fn stage_summarize(cfg: &Config, paths: &Paths, st: &mut Stage) -> Result<()> {
    st.step("load");
    let rows = load_results(&st.input(&paths.file("results.csv")))?;
    st.step("aggregate");
    let by = &cfg.outputs.share_group_by;
    let shares = significance_shares(&rows, by, &cfg.outputs.levels, cfg.rule)?;
    let r2 = battery::r2_summary(&rows, cfg.outputs.r2_group_by)?;
    st.step("write");
    write_atomic(&st.output(paths.file("shares.csv")), |w| Ok(battery::write_shares_csv(&shares, by, w)?))?;
    write_atomic(&st.output(paths.file("r2.csv")), |w| Ok(battery::write_r2_csv(&r2, cfg.outputs.r2_group_by, w)?))
}

/// Whether a result row passes the configured specification-curve filter.
pub fn curve_filter(cfg: &Config) -> impl Fn(&ResultRow) -> bool + '_ {
    let f = &cfg.outputs.curve;
    move |r: &ResultRow| {
        let k = &r.key;
        f.country.as_ref().map_or(true, |c| &k.country == c)
            && f.family.as_ref().map_or(true, |fam| &k.field(GroupBy::Family) == fam)
            && f.outcome.map_or(true, |o| k.outcome == o)
            && f.spec.map_or(true, |s| k.spec == s)
            && f.scheme.map_or(true, |s| k.scheme == s)
    }
}

fn stage_spec_curve(cfg: &Config, paths: &Paths, st: &mut Stage) -> Result<()> {
    st.step("load");
    let rows = load_results(&st.input(&paths.file("results.csv")))?;
    st.step("sort");
    let pts = spec_curve_export(&rows, curve_filter(cfg), cfg.rule)?;
    st.step("write");
    write_atomic(&st.output(paths.file("spec_curve.csv")), |w| Ok(battery::write_spec_curve_csv(&pts, w)?))
}

fn stage_diff_test(cfg: &Config, paths: &Paths, st: &mut Stage) -> Result<()> {
    st.step("load");
    let rows = load_results(&st.input(&paths.file("results.csv")))?;
    st.step("compare");
    let mut verdicts = Vec::new();
    for reference in [cfg.outputs.rain_reference, cfg.outputs.temp_reference] {
        // A family whose reference metric was not run has nothing to compare against.
        if rows.iter().any(|r| r.key.selection == MetricSel::Single(reference)) {
            verdicts.extend(battery::reference_comparison(&rows, reference)?);
        } else if !st.quiet && rows.iter().any(|r| matches!(r.key.selection, MetricSel::Single(m) if m.family() == reference.family())) {
            eprintln!("  diff-test: reference {reference} not in results, skipping its family");
        }
    }
    st.step("write");
    write_atomic(&st.output(paths.file("diff_tests.csv")), |w| Ok(battery::write_diff_tests_csv(&verdicts, w)?))
}

/// Run one command and write its manifest.
pub fn run_command(command: Command, cfg: &Config, quiet: bool) -> Result<RunManifest> {
    let paths = Paths::new(&cfg.outputs.dir);
    let mut st = Stage { quiet, ..Default::default() };
    if !quiet {
        eprintln!("{}", command.name());
    }
    match command {
        Command::SynthWeather => stage_synth_weather(cfg, &paths, &mut st)?,
        Command::SynthSurvey => stage_synth_survey(cfg, &paths, &mut st)?,
        Command::Extract => stage_extract(cfg, &paths, &mut st)?,
        Command::Metrics => stage_metrics(cfg, &paths, &mut st)?,
        Command::Merge => stage_merge(cfg, &paths, &mut st)?,
        Command::Battery => stage_battery(cfg, &paths, &mut st)?,
        Command::Summarize => stage_summarize(cfg, &paths, &mut st)?,
        Command::SpecCurve => stage_spec_curve(cfg, &paths, &mut st)?,
        Command::DiffTest => stage_diff_test(cfg, &paths, &mut st)?,
    }
    st.finish_step();
    let digest = |ps: &[PathBuf]| -> Result<BTreeMap<String, String>> {
        ps.iter()
            .map(|p| {
                let rel = p.strip_prefix(&paths.root).unwrap_or(p).display().to_string();
                Ok((rel, sha256_file(p)?))
            })
            .collect()
    };
    let manifest = RunManifest {
        command: command.name().to_string(),
        tool_version: TOOL_VERSION.to_string(),
        config_hash: cfg.hash.clone(),
        seed: cfg.seed,
        timings: st.timings.clone(),
        inputs: digest(&st.inputs)?,
        outputs: digest(&st.outputs)?,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&paths.manifest(command), |w| Ok(w.write_all(json.as_bytes())?))?;
    Ok(manifest)
}

/// Run every stage in pipeline order.
pub fn run_all(cfg: &Config, quiet: bool) -> Result<Vec<RunManifest>> {
    Command::ALL.iter().map(|c| run_command(*c, cfg, quiet)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RawConfig;

    pub(crate) const TINY: &str = "
[run]
seed = 7
[countries]
names = aa
aa.origin = 30.0,5.0
aa.season = 03-01..05-31
[products]
rain = chirps
temp = cpc_t
[schemes]
use = 1,3,10
[metrics]
use = rain_total,rain_days,temp_mean,tmax_avg
[specs]
use = 1,3
[outputs]
dir = out
[weather]
start = 2008-01-01
end = 2012-12-31
n_rows = 8
n_cols = 8
[geo]
households = 40
households_per_ea = 5
admin_blocks = 2
margin_deg = 0.2
[survey]
years = 2009,2010,2011
";

    fn tiny() -> Config {
        Config::from_raw(&RawConfig::parse(TINY).unwrap()).unwrap()
    }

    #[test]
    fn geography_inside_grid() {
        let cfg = tiny();
        let (hh, admins) = synth_geography(&cfg.countries[0], &cfg.weather, &cfg.geo, cfg.seed);
        assert_eq!(hh.len(), 40);
        assert_eq!(admins.len(), 4);
        let (w, s, e, n) = country_bounds(&cfg.countries[0], &cfg.weather);
        assert!(hh.iter().all(|h| h.location.lon > w && h.location.lon < e && h.location.lat > s && h.location.lat < n));
        assert!(hh.iter().all(|h| admins.iter().any(|a| a.admin_id == h.admin_id)));
    }

    #[test]
    fn feature_record_round_trip() {
        let cfg = tiny();
        let world = build_world(&cfg).unwrap();
        let ctx = &world.countries[0].ctx;
        for (hh, s, f) in resolve_features(ctx, &ObfuscationScheme::ALL).unwrap() {
            let r = FeatureRecord::new("aa", &hh, s, &f);
            assert_eq!(r.feature().unwrap(), f);
            assert_eq!(r.scheme().unwrap(), s);
        }
    }

    #[test]
    fn tmax_product_is_not_proxy() {
        let cfg = tiny();
        let world = build_world(&cfg).unwrap();
        let recs = world_metrics(&cfg, &world).unwrap();
        let tmax: Vec<_> = recs.iter().filter(|r| r.metric_id == "tmax_avg").collect();
        assert!(!tmax.is_empty());
        assert!(tmax.iter().all(|r| r.proxy_flag == 0 && r.missing_flag == 0));
        // 40 households x 3 schemes x 3 years x (2 rain + 2 temp metrics)
        assert_eq!(recs.len(), 40 * 3 * 3 * 4);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a").join("x.txt");
        write_atomic(&p, |w| Ok(w.write_all(b"one")?)).unwrap();
        write_atomic(&p, |w| Ok(w.write_all(b"two")?)).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn missing_input_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.outputs.dir = dir.path().to_path_buf();
        let e = run_command(Command::Battery, &cfg, true).unwrap_err();
        assert!(matches!(e, PipelineError::MissingInput(_)));
        assert_eq!(e.exit_code(), 1);
    }
}
