//! Growing-season weather metrics: 14 rainfall and 8 temperature measures,
//! with deviations from and z-scores against each location's long-run record.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::DailySeries;

/// Days with at least this much rain (mm) are rainy days.
pub const RAIN_DAY_THRESHOLD_MM: f64 = 1.0;

/// First season year admitted to long-run statistics.
pub const LONG_RUN_FROM_YEAR: i32 = 1983;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("series is empty")]
    EmptySeries,
    #[error("season is empty")]
    EmptySeason,
    #[error("season {year} not covered by the series ({start} .. {end})")]
    RangeUnavailable { year: i32, start: NaiveDate, end: NaiveDate },
    #[error("season contains missing values")]
    ContainsMissing,
    #[error("long-run statistics need at least 2 seasons, got {0}")]
    TooFewSeasons(usize),
    #[error("invalid season window: {0}")]
    InvalidWindow(String),
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    Rain,
    Temp,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Rain => "rain",
            Family::Temp => "temp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricId {
    RainMean,
    RainMedian,
    RainVariance,
    RainSkew,
    RainTotal,
    RainDevTotal,
    RainZTotal,
    RainDays,
    RainDevDays,
    NoRainDays,
    NoRainDevDays,
    RainPctDays,
    RainDevPctDays,
    DrySpell,
    TempMean,
    TempMedian,
    TempVariance,
    TempSkew,
    Gdd,
    DevGdd,
    ZGdd,
    TempMaxAvg,
}

impl MetricId {
    pub const ALL: [MetricId; 22] = [
        MetricId::RainMean,
        MetricId::RainMedian,
        MetricId::RainVariance,
        MetricId::RainSkew,
        MetricId::RainTotal,
        MetricId::RainDevTotal,
        MetricId::RainZTotal,
        MetricId::RainDays,
        MetricId::RainDevDays,
        MetricId::NoRainDays,
        MetricId::NoRainDevDays,
        MetricId::RainPctDays,
        MetricId::RainDevPctDays,
        MetricId::DrySpell,
        MetricId::TempMean,
        MetricId::TempMedian,
        MetricId::TempVariance,
        MetricId::TempSkew,
        MetricId::Gdd,
        MetricId::DevGdd,
        MetricId::ZGdd,
        MetricId::TempMaxAvg,
    ];

    pub fn family(self) -> Family {
        if (self as usize) < 14 {
            Family::Rain
        } else {
            Family::Temp
        }
    }

    pub fn of_family(family: Family) -> impl Iterator<Item = MetricId> {
        Self::ALL.into_iter().filter(move |m| m.family() == family)
    }

    pub fn name(self) -> &'static str {
        use MetricId::*;
        match self {
            RainMean => "rain_mean",
            RainMedian => "rain_median",
            RainVariance => "rain_variance",
            RainSkew => "rain_skew",
            RainTotal => "rain_total",
            RainDevTotal => "rain_dev_total",
            RainZTotal => "rain_z_total",
            RainDays => "rain_days",
            RainDevDays => "rain_dev_days",
            NoRainDays => "norain_days",
            NoRainDevDays => "norain_dev_days",
            RainPctDays => "rain_pct_days",
            RainDevPctDays => "rain_dev_pct_days",
            DrySpell => "dry_spell",
            TempMean => "temp_mean",
            TempMedian => "temp_median",
            TempVariance => "temp_variance",
            TempSkew => "temp_skew",
            Gdd => "gdd",
            DevGdd => "dev_gdd",
            ZGdd => "z_gdd",
            TempMaxAvg => "tmax_avg",
        }
    }

    /// Regressors entered on the inverse-hyperbolic-sine scale.
    pub fn uses_ihs(self) -> bool {
        matches!(self, MetricId::RainTotal | MetricId::RainVariance)
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricId {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| MetricsError::UnknownMetric(s.to_string()))
    }
}

/// Calendar window of a growing season, attributed to its start year.
/// A window whose end precedes its start wraps into the next year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonWindow {
    pub start_month: u32,
    pub start_day: u32,
    pub end_month: u32,
    pub end_day: u32,
}

impl SeasonWindow {
    pub fn new(start_month: u32, start_day: u32, end_month: u32, end_day: u32) -> Result<Self> {
        for (m, d) in [(start_month, start_day), (end_month, end_day)] {
            // Feb 29 is rejected so that every year has the window
            if NaiveDate::from_ymd_opt(2001, m, d).is_none() {
                return Err(MetricsError::InvalidWindow(format!("{m:02}-{d:02} is not a date in every year")));
            }
        }
        Ok(Self { start_month, start_day, end_month, end_day })
    }

    pub fn wraps(&self) -> bool {
        (self.end_month, self.end_day) < (self.start_month, self.start_day)
    }

    pub fn dates(&self, year: i32) -> (NaiveDate, NaiveDate) {
        let start = NaiveDate::from_ymd_opt(year, self.start_month, self.start_day).expect("validated");
        let end_year = if self.wraps() { year + 1 } else { year };
        let end = NaiveDate::from_ymd_opt(end_year, self.end_month, self.end_day).expect("validated");
        (start, end)
    }

    pub fn len(&self, year: i32) -> usize {
        let (s, e) = self.dates(year);
        (e - s).num_days() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl FromStr for SeasonWindow {
    type Err = MetricsError;

    /// `MM-DD..MM-DD`
    fn from_str(s: &str) -> Result<Self> {
        let bad = || MetricsError::InvalidWindow(s.to_string());
        let (a, b) = s.trim().split_once("..").ok_or_else(bad)?;
        let md = |x: &str| -> Result<(u32, u32)> {
            let (m, d) = x.trim().split_once('-').ok_or_else(bad)?;
            Ok((m.parse().map_err(|_| bad())?, d.parse().map_err(|_| bad())?))
        };
        let ((sm, sd), (em, ed)) = (md(a)?, md(b)?);
        SeasonWindow::new(sm, sd, em, ed)
    }
}

impl fmt::Display for SeasonWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}-{:02}..{:02}-{:02}", self.start_month, self.start_day, self.end_month, self.end_day)
    }
}

/// The window of `year` cut out of `series`.
pub fn season_slice(series: &DailySeries, window: &SeasonWindow, year: i32) -> Result<DailySeries> {
    let (start, end) = window.dates(year);
    if series.values.is_empty() || start < series.start || end > series.end_date() {
        return Err(MetricsError::RangeUnavailable {
            year,
            start: series.start,
            end: series.start + Duration::days(series.values.len().max(1) as i64 - 1),
        });
    }
    let a = (start - series.start).num_days() as usize;
    let b = (end - series.start).num_days() as usize;
    let values = series.values[a..=b].to_vec();
    if values.iter().any(|v| v.is_nan()) {
        return Err(MetricsError::ContainsMissing);
    }
    Ok(DailySeries { start, values, variable_kind: series.variable_kind, provenance: series.provenance.clone() })
}

/// Season years whose window lies entirely inside the series and start no
/// earlier than [`LONG_RUN_FROM_YEAR`].
pub fn available_season_years(series: &DailySeries, window: &SeasonWindow) -> Vec<i32> {
    if series.values.is_empty() {
        return Vec::new();
    }
    let (first, last) = (series.start.year().max(LONG_RUN_FROM_YEAR), series.end_date().year());
    (first..=last)
        .filter(|&y| {
            let (s, e) = window.dates(y);
            s >= series.start && e <= series.end_date()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub median: f64,
    pub variance: f64,
    pub skew: f64,
}

/// Mean, lower median, sample variance and adjusted Fisher-Pearson skewness.
/// Skewness is 0 when the variance is 0 or fewer than 3 values are given.
pub fn moments(values: &[f64]) -> Result<Moments> {
    let n = values.len();
    if n == 0 {
        return Err(MetricsError::EmptySeries);
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[(n - 1) / 2];
    let (m2, m3) = values.iter().fold((0.0, 0.0), |(a, b), v| {
        let d = v - mean;
        (a + d * d, b + d * d * d)
    });
    if sorted[0] == sorted[n - 1] {
        return Ok(Moments { mean: sorted[0], median, variance: 0.0, skew: 0.0 });
    }
    let variance = if n > 1 { m2 / (nf - 1.0) } else { 0.0 };
    let skew = if n < 3 {
        0.0
    } else {
        let (m2, m3) = (m2 / nf, m3 / nf);
        let g1 = m3 / m2.powf(1.5);
        (nf * (nf - 1.0)).sqrt() / (nf - 2.0) * g1
    };
    Ok(Moments { mean, median, variance, skew })
}

/// Longest run of consecutive days below the rain-day threshold.
pub fn longest_dry_spell(values: &[f64]) -> usize {
    let mut best = 0;
    let mut run = 0;
    for v in values {
        if *v < RAIN_DAY_THRESHOLD_MM {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best
}

/// Season quantities that need no long-run reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RainBase {
    pub length: usize,
    pub moments: Moments,
    pub total: f64,
    pub rain_days: usize,
    pub norain_days: usize,
    pub pct_rain_days: f64,
    pub longest_dry_spell: usize,
}

impl RainBase {
    pub fn from_season(season: &[f64]) -> Result<Self> {
        if season.is_empty() {
            return Err(MetricsError::EmptySeason);
        }
        if season.iter().any(|v| v.is_nan()) {
            return Err(MetricsError::ContainsMissing);
        }
        let moments = moments(season)?;
        let rain_days = season.iter().filter(|v| **v >= RAIN_DAY_THRESHOLD_MM).count();
        let length = season.len();
        Ok(Self {
            length,
            moments,
            total: season.iter().sum(),
            rain_days,
            norain_days: length - rain_days,
            pct_rain_days: rain_days as f64 / length as f64,
            longest_dry_spell: longest_dry_spell(season),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TempBase {
    pub length: usize,
    pub moments: Moments,
    pub gdd: usize,
}

impl TempBase {
    pub fn from_season(season: &[f64], bounds: GddBounds) -> Result<Self> {
        if season.is_empty() {
            return Err(MetricsError::EmptySeason);
        }
        if season.iter().any(|v| v.is_nan()) {
            return Err(MetricsError::ContainsMissing);
        }
        Ok(Self {
            length: season.len(),
            moments: moments(season)?,
            gdd: season.iter().filter(|t| bounds.contains(**t)).count(),
        })
    }
}

/// Inclusive daily-mean temperature band counted as a growing degree day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GddBounds {
    pub low_c: f64,
    pub high_c: f64,
}

impl Default for GddBounds {
    fn default() -> Self {
        Self { low_c: 10.0, high_c: 30.0 }
    }
}

impl GddBounds {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.low_c && t <= self.high_c
    }
}

/// Sample mean and standard deviation of one metric over a location's
/// seasons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongRunMoment {
    pub mean: f64,
    pub sd: f64,
    pub n_seasons: usize,
}

impl LongRunMoment {
    pub fn deviation(&self, x: f64) -> f64 {
        x - self.mean
    }

    /// NaN when the long-run sd is zero.
    pub fn z_score(&self, x: f64) -> f64 {
        if self.sd > 0.0 {
            (x - self.mean) / self.sd
        } else {
            f64::NAN
        }
    }
}

pub fn long_run_stats(values: &[f64]) -> Result<LongRunMoment> {
    let n = values.len();
    if n < 2 {
        return Err(MetricsError::TooFewSeasons(n));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    Ok(LongRunMoment { mean, sd: (ss / (n as f64 - 1.0)).sqrt(), n_seasons: n })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RainLongRun {
    pub total: LongRunMoment,
    pub rain_days: LongRunMoment,
    pub norain_days: LongRunMoment,
    pub pct_rain_days: LongRunMoment,
}

impl RainLongRun {
    pub fn from_seasons(seasons: &[RainBase]) -> Result<Self> {
        let col = |f: fn(&RainBase) -> f64| long_run_stats(&seasons.iter().map(f).collect::<Vec<_>>());
        Ok(Self {
            total: col(|s| s.total)?,
            rain_days: col(|s| s.rain_days as f64)?,
            norain_days: col(|s| s.norain_days as f64)?,
            pct_rain_days: col(|s| s.pct_rain_days)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TempLongRun {
    pub gdd: LongRunMoment,
}

impl TempLongRun {
    pub fn from_seasons(seasons: &[TempBase]) -> Result<Self> {
        Ok(Self { gdd: long_run_stats(&seasons.iter().map(|s| s.gdd as f64).collect::<Vec<_>>())? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RainfallMetrics {
    pub mean_daily: f64,
    pub median_daily: f64,
    pub variance_daily: f64,
    pub skew_daily: f64,
    pub total: f64,
    pub dev_total: f64,
    pub z_total: f64,
    pub rain_days: f64,
    pub dev_rain_days: f64,
    pub norain_days: f64,
    pub dev_norain_days: f64,
    pub pct_rain_days: f64,
    pub dev_pct_rain_days: f64,
    pub longest_dry_spell: f64,
}

impl RainfallMetrics {
    pub fn get(&self, id: MetricId) -> Option<f64> {
        use MetricId::*;
        Some(match id {
            RainMean => self.mean_daily,
            RainMedian => self.median_daily,
            RainVariance => self.variance_daily,
            RainSkew => self.skew_daily,
            RainTotal => self.total,
            RainDevTotal => self.dev_total,
            RainZTotal => self.z_total,
            RainDays => self.rain_days,
            RainDevDays => self.dev_rain_days,
            NoRainDays => self.norain_days,
            NoRainDevDays => self.dev_norain_days,
            RainPctDays => self.pct_rain_days,
            RainDevPctDays => self.dev_pct_rain_days,
            DrySpell => self.longest_dry_spell,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureMetrics {
    pub mean_daily: f64,
    pub median_daily: f64,
    pub variance_daily: f64,
    pub skew_daily: f64,
    pub gdd: f64,
    pub dev_gdd: f64,
    pub z_gdd: f64,
    pub tmax_avg: f64,
    /// `tmax_avg` came from the daily-mean series because no max series exists.
    pub tmax_proxy: bool,
}

impl TemperatureMetrics {
    pub fn get(&self, id: MetricId) -> Option<f64> {
        use MetricId::*;
        Some(match id {
            TempMean => self.mean_daily,
            TempMedian => self.median_daily,
            TempVariance => self.variance_daily,
            TempSkew => self.skew_daily,
            Gdd => self.gdd,
            DevGdd => self.dev_gdd,
            ZGdd => self.z_gdd,
            TempMaxAvg => self.tmax_avg,
            _ => return None,
        })
    }
}

/// All 22 metrics for one season. Z-scores are NaN when the long-run sd is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeatherMetricSet {
    pub rain: Option<RainfallMetrics>,
    pub temp: Option<TemperatureMetrics>,
}

impl WeatherMetricSet {
    pub fn get(&self, id: MetricId) -> Option<f64> {
        match id.family() {
            Family::Rain => self.rain.and_then(|r| r.get(id)),
            Family::Temp => self.temp.and_then(|t| t.get(id)),
        }
    }
}

pub fn rainfall_metrics_from_base(b: &RainBase, lr: &RainLongRun) -> RainfallMetrics {
    RainfallMetrics {
        mean_daily: b.moments.mean,
        median_daily: b.moments.median,
        variance_daily: b.moments.variance,
        skew_daily: b.moments.skew,
        total: b.total,
        dev_total: lr.total.deviation(b.total),
        z_total: lr.total.z_score(b.total),
        rain_days: b.rain_days as f64,
        dev_rain_days: lr.rain_days.deviation(b.rain_days as f64),
        norain_days: b.norain_days as f64,
        dev_norain_days: lr.norain_days.deviation(b.norain_days as f64),
        pct_rain_days: b.pct_rain_days,
        dev_pct_rain_days: lr.pct_rain_days.deviation(b.pct_rain_days),
        longest_dry_spell: b.longest_dry_spell as f64,
    }
}

pub fn rainfall_metrics(season: &DailySeries, lr: &RainLongRun) -> Result<RainfallMetrics> {
    Ok(rainfall_metrics_from_base(&RainBase::from_season(&season.values)?, lr))
}

pub fn temperature_metrics_from_base(b: &TempBase, max_season: Option<&[f64]>, mean_season: &[f64], lr: &TempLongRun) -> Result<TemperatureMetrics> {
    let (tmax_avg, tmax_proxy) = match max_season {
        Some(mx) => {
            if mx.is_empty() {
                return Err(MetricsError::EmptySeason);
            }
            if mx.iter().any(|v| v.is_nan()) {
                return Err(MetricsError::ContainsMissing);
            }
            (mx.iter().sum::<f64>() / mx.len() as f64, false)
        }
        None => (mean_season.iter().copied().fold(f64::NEG_INFINITY, f64::max), true),
    };
    Ok(TemperatureMetrics {
        mean_daily: b.moments.mean,
        median_daily: b.moments.median,
        variance_daily: b.moments.variance,
        skew_daily: b.moments.skew,
        gdd: b.gdd as f64,
        dev_gdd: lr.gdd.deviation(b.gdd as f64),
        z_gdd: lr.gdd.z_score(b.gdd as f64),
        tmax_avg,
        tmax_proxy,
    })
}

pub fn temperature_metrics(
    season_mean: &DailySeries,
    season_max: Option<&DailySeries>,
    lr: &TempLongRun,
    bounds: GddBounds,
) -> Result<TemperatureMetrics> {
    let base = TempBase::from_season(&season_mean.values, bounds)?;
    temperature_metrics_from_base(&base, season_max.map(|s| s.values.as_slice()), &season_mean.values, lr)
}

/// Per-season metric values at one location, for the requested years.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonMetrics {
    pub year: i32,
    /// `None` when the season could not be computed (missing data or
    /// outside the record).
    pub rain: Option<RainfallMetrics>,
    pub temp: Option<TemperatureMetrics>,
}

/// Rainfall metrics for `years` at one location, with long-run statistics
/// taken over every available season of the record.
pub fn location_rain_metrics(series: &DailySeries, window: &SeasonWindow, years: &[i32]) -> Vec<Option<RainfallMetrics>> {
    let seasons: Vec<(i32, Option<RainBase>)> = available_season_years(series, window)
        .into_iter()
        .map(|y| (y, season_slice(series, window, y).ok().and_then(|s| RainBase::from_season(&s.values).ok())))
        .collect();
    let complete: Vec<RainBase> = seasons.iter().filter_map(|(_, b)| *b).collect();
    let lr = RainLongRun::from_seasons(&complete).ok();
    years
        .iter()
        .map(|y| {
            let base = seasons.iter().find(|(sy, _)| sy == y).and_then(|(_, b)| *b)?;
            lr.as_ref().map(|lr| rainfall_metrics_from_base(&base, lr))
        })
        .collect()
}

pub fn location_temp_metrics(
    mean_series: &DailySeries,
    max_series: Option<&DailySeries>,
    window: &SeasonWindow,
    years: &[i32],
    bounds: GddBounds,
) -> Vec<Option<TemperatureMetrics>> {
    let seasons: Vec<(i32, Option<TempBase>)> = available_season_years(mean_series, window)
        .into_iter()
        .map(|y| (y, season_slice(mean_series, window, y).ok().and_then(|s| TempBase::from_season(&s.values, bounds).ok())))
        .collect();
    let complete: Vec<TempBase> = seasons.iter().filter_map(|(_, b)| *b).collect();
    let lr = TempLongRun::from_seasons(&complete).ok();
    years
        .iter()
        .map(|y| {
            let base = seasons.iter().find(|(sy, _)| sy == y).and_then(|(_, b)| *b)?;
            let lr = lr.as_ref()?;
            let mean = season_slice(mean_series, window, *y).ok()?;
            let max = match max_series {
                Some(m) => Some(season_slice(m, window, *y).ok()?),
                None => None,
            };
            temperature_metrics_from_base(&base, max.as_ref().map(|m| m.values.as_slice()), &mean.values, lr).ok()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::Provenance;
    use crate::grid::VariableKind;

    fn series(start: NaiveDate, values: Vec<f64>) -> DailySeries {
        DailySeries {
            start,
            values,
            variable_kind: VariableKind::Rainfall,
            provenance: Provenance { scheme: None, product_id: "t".into() },
        }
    }

    fn d(y: i32, m: u32, dd: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, dd).unwrap()
    }

    #[test]
    fn metric_catalogue_split() {
        assert_eq!(MetricId::of_family(Family::Rain).count(), 14);
        assert_eq!(MetricId::of_family(Family::Temp).count(), 8);
        for m in MetricId::ALL {
            assert_eq!(m.name().parse::<MetricId>().unwrap(), m);
        }
    }

    #[test]
    fn season_slice_calendar() {
        let s = series(d(2000, 1, 1), vec![0.0; 1650]);
        let full = SeasonWindow::new(1, 1, 12, 31).unwrap();
        let y = season_slice(&s, &full, 2001).unwrap();
        assert_eq!(y.values.len(), 365);
        assert_eq!(y.start, d(2001, 1, 1));
        let wrap = SeasonWindow::new(11, 1, 3, 31).unwrap();
        // Nov+Dec = 61 days, Jan-Mar = 90 or 91
        assert_eq!(season_slice(&s, &wrap, 2000).unwrap().values.len(), 151);
        assert_eq!(season_slice(&s, &wrap, 2003).unwrap().values.len(), 152);
        assert!(matches!(season_slice(&s, &wrap, 2004), Err(MetricsError::RangeUnavailable { .. })));
        assert!(matches!(season_slice(&s, &full, 1999), Err(MetricsError::RangeUnavailable { .. })));
    }

    #[test]
    fn season_with_gap_is_missing() {
        let mut v = vec![0.0; 400];
        v[10] = f64::NAN;
        let s = series(d(2000, 1, 1), v);
        let w = SeasonWindow::new(1, 1, 1, 31).unwrap();
        assert_eq!(season_slice(&s, &w, 2000), Err(MetricsError::ContainsMissing));
    }

    #[test]
    fn window_parsing() {
        let w: SeasonWindow = "11-01..03-31".parse().unwrap();
        assert!(w.wraps());
        assert_eq!(w.to_string(), "11-01..03-31");
        assert!("02-29..03-01".parse::<SeasonWindow>().is_err());
        assert!("junk".parse::<SeasonWindow>().is_err());
    }

    #[test]
    fn rainfall_hand_example() {
        let s = [0.0, 0.0, 5.0, 1.0, 0.0, 12.0, 0.0];
        let b = RainBase::from_season(&s).unwrap();
        assert_eq!(b.total, 18.0);
        assert!((b.moments.mean - 18.0 / 7.0).abs() < 1e-15);
        assert_eq!(b.rain_days, 3);
        assert_eq!(b.norain_days, 4);
        assert!((b.pct_rain_days - 3.0 / 7.0).abs() < 1e-15);
        assert_eq!(b.longest_dry_spell, 2);
    }

    #[test]
    fn constant_rain() {
        let b = RainBase::from_season(&[3.0; 10]).unwrap();
        assert_eq!(b.moments.variance, 0.0);
        assert_eq!(b.moments.skew, 0.0);
        assert_eq!(b.rain_days, 10);
        assert_eq!(b.longest_dry_spell, 0);
    }

    #[test]
    fn deviation_and_z() {
        let lr = LongRunMoment { mean: 18.0, sd: 6.0, n_seasons: 30 };
        assert_eq!(lr.deviation(24.0), 6.0);
        assert_eq!(lr.z_score(24.0), 1.0);
        let flat = LongRunMoment { mean: 18.0, sd: 0.0, n_seasons: 30 };
        assert!(flat.z_score(24.0).is_nan());
    }

    #[test]
    fn gdd_examples() {
        let b = TempBase::from_season(&[8.0, 15.0, 31.0, 22.0], GddBounds::default()).unwrap();
        assert_eq!(b.gdd, 2);
        let all = TempBase::from_season(&[12.0, 20.0, 30.0], GddBounds::default()).unwrap();
        assert_eq!(all.gdd, 3);
        let lr = TempLongRun { gdd: LongRunMoment { mean: 2.0, sd: 1.0, n_seasons: 5 } };
        let m = temperature_metrics_from_base(&b, None, &[8.0, 15.0, 31.0, 22.0], &lr).unwrap();
        assert_eq!(m.dev_gdd, 0.0);
        assert!(m.tmax_proxy);
        assert_eq!(m.tmax_avg, 31.0);
        let with_max = temperature_metrics_from_base(&b, Some(&[10.0, 20.0, 30.0, 40.0]), &[0.0], &lr).unwrap();
        assert!(!with_max.tmax_proxy);
        assert_eq!(with_max.tmax_avg, 25.0);
    }

    #[test]
    fn long_run_examples() {
        let lr = long_run_stats(&[10.0, 20.0, 30.0]).unwrap();
        assert_eq!(lr.mean, 20.0);
        assert!((lr.sd - 10.0).abs() < 1e-12);
        assert_eq!(long_run_stats(&[5.0, 5.0]).unwrap().sd, 0.0);
        assert_eq!(long_run_stats(&[5.0]), Err(MetricsError::TooFewSeasons(1)));
    }

    #[test]
    fn moments_examples() {
        let m = moments(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.mean, 2.5);
        assert_eq!(m.median, 2.0);
        assert!((m.variance - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(moments(&[1.0, 2.0, 3.0]).unwrap().skew, 0.0);
        let c = moments(&[4.0; 5]).unwrap();
        assert_eq!((c.variance, c.skew), (0.0, 0.0));
        assert_eq!(moments(&[]), Err(MetricsError::EmptySeries));
    }

    #[test]
    fn skew_matches_reference_value() {
        // scipy.stats.skew([1, 2, 10], bias=False)
        let m = moments(&[1.0, 2.0, 10.0]).unwrap();
        assert!((m.skew - 1.6523167403329906).abs() < 1e-12, "{}", m.skew);
    }

    #[test]
    fn location_metrics_skip_incomplete_years() {
        // 1983-01-01 .. 1986-12-31 of daily 2 mm rain, one gap in 1985
        let n = (d(1987, 1, 1) - d(1983, 1, 1)).num_days() as usize;
        let mut v: Vec<f64> = (0..n).map(|i| (i % 7) as f64).collect();
        v[800] = f64::NAN;
        let s = series(d(1983, 1, 1), v);
        let w = SeasonWindow::new(1, 1, 12, 31).unwrap();
        let out = location_rain_metrics(&s, &w, &[1983, 1985, 1990]);
        assert!(out[0].is_some());
        assert!(out[1].is_none());
        assert!(out[2].is_none());
    }
}
