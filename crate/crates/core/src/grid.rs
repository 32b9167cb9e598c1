//! Daily gridded weather stacks and the AGWX container.
//!
//! A [`RasterStack`] stores one variable on a regular lon/lat grid for a run
//! of consecutive days. Row 0 is the northernmost row; cell `(r, c)` is
//! centred at `lon = origin_lon + (c + 0.5) * cell_size_lon` and
//! `lat = origin_lat - (r + 0.5) * cell_size_lat`. Values are laid out
//! day-major, then row-major. Missing values are NaN.
//!
//! The AGWX file is little-endian:
//!
//! ```text
//! "AGWX" | version u16 = 1 | variable_kind u8 | product_id: u8 len + UTF-8
//! origin_lon f64 | origin_lat f64 | cell_size_lon f64 | cell_size_lat f64
//! n_rows u32 | n_cols u32 | start_date i32 (days since 1970-01-01) | n_days u32
//! payload: n_days * n_rows * n_cols f32
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::geo::{GeoPoint, KM_PER_DEGREE};

pub const MAGIC: &[u8; 4] = b"AGWX";
pub const FORMAT_VERSION: u16 = 1;

/// First day kept when a record is shortened for blinding.
pub const BLINDING_START: NaiveDate = match NaiveDate::from_ymd_opt(1983, 1, 1) {
    Some(d) => d,
    None => panic!("invalid blinding date"),
};

const EPOCH: NaiveDate = match NaiveDate::from_ymd_opt(1970, 1, 1) {
    Some(d) => d,
    None => panic!("invalid epoch"),
};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("not an AGWX file (bad magic)")]
    BadMagic,
    #[error("unsupported AGWX version {0}")]
    UnsupportedVersion(u16),
    #[error("payload truncated: header declares {expected} bytes, file has {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("point ({lon}, {lat}) lies outside the grid")]
    OutOfDomain { lon: f64, lat: f64 },
    #[error("cell ({row}, {col}) out of range")]
    IndexOutOfRange { row: usize, col: usize },
    #[error("date {0} outside the stack's record")]
    DateOutOfRange(NaiveDate),
    #[error("values length {found} does not match dimensions ({expected})")]
    LengthMismatch { expected: usize, found: usize },
    #[error("negative rainfall value {value} at payload index {index}")]
    NegativeRainfall { index: usize, value: f32 },
    #[error("invalid synthetic weather config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GridError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    Rainfall,
    TempMean,
    TempMax,
}

impl VariableKind {
    pub fn code(self) -> u8 {
        match self {
            VariableKind::Rainfall => 0,
            VariableKind::TempMean => 1,
            VariableKind::TempMax => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(VariableKind::Rainfall),
            1 => Some(VariableKind::TempMean),
            2 => Some(VariableKind::TempMax),
            _ => None,
        }
    }

    pub fn units(self) -> &'static str {
        match self {
            VariableKind::Rainfall => "mm/day",
            VariableKind::TempMean | VariableKind::TempMax => "degC",
        }
    }
}

/// Georeferencing and time axis of a stack.
#[derive(Debug, Clone, PartialEq)]
pub struct GridHeader {
    pub variable_kind: VariableKind,
    pub product_id: String,
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub cell_size_lon: f64,
    pub cell_size_lat: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    pub start_date: NaiveDate,
    pub n_days: usize,
}

impl GridHeader {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GridError::InvalidHeader(m.to_string()));
        if self.product_id.len() > u8::MAX as usize {
            return bad("product_id longer than 255 bytes");
        }
        if self.n_rows == 0 || self.n_cols == 0 || self.n_days == 0 {
            return bad("dimensions must be positive");
        }
        if self.n_rows > u32::MAX as usize || self.n_cols > u32::MAX as usize || self.n_days > u32::MAX as usize {
            return bad("dimension exceeds u32");
        }
        if !(self.cell_size_lon > 0.0 && self.cell_size_lat > 0.0) {
            return bad("cell sizes must be > 0");
        }
        if !(self.origin_lon.is_finite() && self.origin_lat.is_finite()) {
            return bad("origin must be finite");
        }
        Ok(())
    }

    pub fn cells_per_day(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn len(&self) -> usize {
        self.n_days * self.cells_per_day()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Last day covered (inclusive).
    pub fn end_date(&self) -> NaiveDate {
        self.start_date + Duration::days(self.n_days as i64 - 1)
    }

    pub fn cell_center(&self, row: usize, col: usize) -> GeoPoint {
        GeoPoint::new(
            self.origin_lon + (col as f64 + 0.5) * self.cell_size_lon,
            self.origin_lat - (row as f64 + 0.5) * self.cell_size_lat,
        )
    }

    /// Containing cell by floor indexing; boundaries belong to the cell to the
    /// east/south.
    pub fn cell_of(&self, point: GeoPoint) -> Result<(usize, usize)> {
        let fc = ((point.lon - self.origin_lon) / self.cell_size_lon).floor();
        let fr = ((self.origin_lat - point.lat) / self.cell_size_lat).floor();
        if !(fc >= 0.0 && fr >= 0.0 && fc < self.n_cols as f64 && fr < self.n_rows as f64) {
            return Err(GridError::OutOfDomain { lon: point.lon, lat: point.lat });
        }
        Ok((fr as usize, fc as usize))
    }

    pub fn day_index(&self, date: NaiveDate) -> Result<usize> {
        let d = (date - self.start_date).num_days();
        if d < 0 || d >= self.n_days as i64 {
            return Err(GridError::DateOutOfRange(date));
        }
        Ok(d as usize)
    }

    /// West, south, east, north edges of the grid.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (
            self.origin_lon,
            self.origin_lat - self.n_rows as f64 * self.cell_size_lat,
            self.origin_lon + self.n_cols as f64 * self.cell_size_lon,
            self.origin_lat,
        )
    }
}

/// One daily variable on a regular grid. Immutable once built.
#[derive(Debug, Clone)]
pub struct RasterStack {
    header: GridHeader,
    values: Vec<f32>,
}

impl PartialEq for RasterStack {
    // bitwise so that NaN cells compare equal after a round trip
    fn eq(&self, other: &Self) -> bool {
        self.header == other.header
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl RasterStack {
    pub fn new(header: GridHeader, values: Vec<f32>) -> Result<Self> {
        header.validate()?;
        if values.len() != header.len() {
            return Err(GridError::LengthMismatch { expected: header.len(), found: values.len() });
        }
        if header.variable_kind == VariableKind::Rainfall {
            if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| **v < 0.0) {
                return Err(GridError::NegativeRainfall { index, value });
            }
        }
        Ok(Self { header, values })
    }

    pub fn header(&self) -> &GridHeader {
        &self.header
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn variable_kind(&self) -> VariableKind {
        self.header.variable_kind
    }

    pub fn product_id(&self) -> &str {
        &self.header.product_id
    }

    pub fn cell_of(&self, point: GeoPoint) -> Result<(usize, usize)> {
        self.header.cell_of(point)
    }

    fn offset(&self, day: usize, row: usize, col: usize) -> usize {
        day * self.header.cells_per_day() + row * self.header.n_cols + col
    }

    pub fn value_at(&self, date: NaiveDate, row: usize, col: usize) -> Result<f32> {
        let day = self.header.day_index(date)?;
        self.value_at_index(day, row, col)
    }

    pub fn value_at_index(&self, day: usize, row: usize, col: usize) -> Result<f32> {
        if row >= self.header.n_rows || col >= self.header.n_cols {
            return Err(GridError::IndexOutOfRange { row, col });
        }
        if day >= self.header.n_days {
            return Err(GridError::DateOutOfRange(self.header.start_date + Duration::days(day as i64)));
        }
        Ok(self.values[self.offset(day, row, col)])
    }

    /// Values of one cell for `n_days` days starting at day index `first_day`.
    pub fn cell_series(&self, row: usize, col: usize, first_day: usize, n_days: usize) -> impl Iterator<Item = f32> + '_ {
        let stride = self.header.cells_per_day();
        let base = row * self.header.n_cols + col;
        (first_day..first_day + n_days).map(move |d| self.values[d * stride + base])
    }

    /// True when the record starts no earlier than the blinding cut-off.
    pub fn is_blinded(&self) -> bool {
        self.header.start_date >= BLINDING_START
    }

    /// Drop every day before `from`. Returns an unchanged copy if the record
    /// already starts on or after `from`.
    pub fn shortened_to(&self, from: NaiveDate) -> Result<Self> {
        if from <= self.header.start_date {
            return Ok(self.clone());
        }
        let skip = self.header.day_index(from)?;
        let mut header = self.header.clone();
        header.start_date = from;
        header.n_days -= skip;
        let values = self.values[skip * self.header.cells_per_day()..].to_vec();
        Ok(Self { header, values })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(64 + h.product_id.len() + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(h.variable_kind.code());
        out.push(h.product_id.len() as u8);
        out.extend_from_slice(h.product_id.as_bytes());
        for v in [h.origin_lon, h.origin_lat, h.cell_size_lon, h.cell_size_lat] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(h.n_rows as u32).to_le_bytes());
        out.extend_from_slice(&(h.n_cols as u32).to_le_bytes());
        let days = (h.start_date - EPOCH).num_days() as i32;
        out.extend_from_slice(&days.to_le_bytes());
        out.extend_from_slice(&(h.n_days as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(|_| GridError::BadMagic)? != MAGIC {
            return Err(GridError::BadMagic);
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != FORMAT_VERSION {
            return Err(GridError::UnsupportedVersion(version));
        }
        let kind_code = r.array::<1>()?[0];
        let variable_kind = VariableKind::from_code(kind_code)
            .ok_or_else(|| GridError::InvalidHeader(format!("unknown variable kind {kind_code}")))?;
        let id_len = r.array::<1>()?[0] as usize;
        let product_id = std::str::from_utf8(r.take(id_len)?)
            .map_err(|_| GridError::InvalidHeader("product_id is not UTF-8".into()))?
            .to_string();
        let origin_lon = f64::from_le_bytes(r.array()?);
        let origin_lat = f64::from_le_bytes(r.array()?);
        let cell_size_lon = f64::from_le_bytes(r.array()?);
        let cell_size_lat = f64::from_le_bytes(r.array()?);
        let n_rows = u32::from_le_bytes(r.array()?) as usize;
        let n_cols = u32::from_le_bytes(r.array()?) as usize;
        let days = i32::from_le_bytes(r.array()?);
        let n_days = u32::from_le_bytes(r.array()?) as usize;
        let start_date = EPOCH
            .checked_add_signed(Duration::days(days as i64))
            .ok_or_else(|| GridError::InvalidHeader(format!("start date offset {days} out of range")))?;
        let header = GridHeader {
            variable_kind,
            product_id,
            origin_lon,
            origin_lat,
            cell_size_lon,
            cell_size_lat,
            n_rows,
            n_cols,
            start_date,
            n_days,
        };
        header.validate()?;
        let expected = header
            .len()
            .checked_mul(4)
            .ok_or_else(|| GridError::InvalidHeader("dimensions overflow".into()))?;
        let payload = &bytes[r.pos..];
        if payload.len() < expected {
            return Err(GridError::TruncatedPayload { expected, found: payload.len() });
        }
        if payload.len() > expected {
            return Err(GridError::InvalidHeader(format!(
                "{} trailing bytes after payload",
                payload.len() - expected
            )));
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        RasterStack::new(header, values)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(GridError::InvalidHeader("file ends inside the header".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }
}

pub fn load_raster_stack(path: impl AsRef<Path>) -> Result<RasterStack> {
    let bytes = fs::read(path)?;
    RasterStack::from_bytes(&bytes)
}

pub fn save_raster_stack(stack: &RasterStack, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&stack.to_bytes())?;
    f.flush()?;
    Ok(())
}

/// Catalogue entry for a weather product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductSpec {
    pub product_id: String,
    pub variable_kind: VariableKind,
    pub cell_size_lon: f64,
    pub cell_size_lat: f64,
    /// Also ships a daily maximum temperature series.
    pub provides_max: bool,
    pub units: String,
}

/// Native resolutions of the rainfall and temperature products modelled by
/// the synthetic generator.
pub const NATIVE_CELL_SIZES: &[(f64, f64)] = &[
    (0.1, 0.1),
    (0.05, 0.05),
    (0.5, 0.5),
    (0.28, 0.28),
    (0.625, 0.5),
    (0.0375, 0.0375),
];

impl ProductSpec {
    pub fn new(product_id: &str, variable_kind: VariableKind, cell: (f64, f64), provides_max: bool) -> Result<Self> {
        Self::with_allowed_sizes(product_id, variable_kind, cell, provides_max, NATIVE_CELL_SIZES)
    }

    pub fn with_allowed_sizes(
        product_id: &str,
        variable_kind: VariableKind,
        cell: (f64, f64),
        provides_max: bool,
        allowed: &[(f64, f64)],
    ) -> Result<Self> {
        if !allowed.iter().any(|&(lo, la)| lo == cell.0 && la == cell.1) {
            return Err(GridError::InvalidConfig(format!(
                "cell size {}x{} for {product_id} is not in the configured set",
                cell.0, cell.1
            )));
        }
        if provides_max && variable_kind == VariableKind::Rainfall {
            return Err(GridError::InvalidConfig(format!("{product_id}: rainfall product cannot provide tmax")));
        }
        Ok(Self {
            product_id: product_id.to_string(),
            variable_kind,
            cell_size_lon: cell.0,
            cell_size_lat: cell.1,
            provides_max,
            units: variable_kind.units().to_string(),
        })
    }

    /// The six rainfall and three temperature products at native resolution.
    pub fn catalogue() -> Vec<ProductSpec> {
        use VariableKind::*;
        [
            ("arc2", Rainfall, (0.1, 0.1), false),
            ("chirps", Rainfall, (0.05, 0.05), false),
            ("cpc", Rainfall, (0.5, 0.5), false),
            ("era5", Rainfall, (0.28, 0.28), false),
            ("merra2", Rainfall, (0.625, 0.5), false),
            ("tamsat", Rainfall, (0.0375, 0.0375), false),
            ("cpc_t", TempMean, (0.5, 0.5), true),
            ("era5_t", TempMean, (0.28, 0.28), false),
            ("merra2_t", TempMean, (0.625, 0.5), false),
        ]
        .into_iter()
        .map(|(id, kind, cell, max)| ProductSpec::new(id, kind, cell, max).expect("catalogue entries are valid"))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RainParams {
    pub gamma_shape: f64,
    pub gamma_scale: f64,
    /// Annual mean of the wet-day probability.
    pub wet_prob_mean: f64,
    /// Amplitude of the seasonal cycle in wet-day probability.
    pub wet_prob_amplitude: f64,
    /// Day of year at which the wet-day probability peaks.
    pub peak_day_of_year: f64,
}

impl Default for RainParams {
    fn default() -> Self {
        Self { gamma_shape: 0.8, gamma_scale: 10.0, wet_prob_mean: 0.35, wet_prob_amplitude: 0.3, peak_day_of_year: 200.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TempParams {
    pub annual_mean_c: f64,
    pub annual_amplitude_c: f64,
    pub peak_day_of_year: f64,
    pub noise_sd_c: f64,
    /// Added to the daily mean to produce the daily maximum.
    pub diurnal_half_range_c: f64,
}

impl Default for TempParams {
    fn default() -> Self {
        Self { annual_mean_c: 24.0, annual_amplitude_c: 4.0, peak_day_of_year: 100.0, noise_sd_c: 2.0, diurnal_half_range_c: 6.0 }
    }
}

/// Parameters of the synthetic daily field generator.
///
/// Each day draws standard-normal noise, smooths it with a Gaussian kernel and
/// renormalises to unit variance, giving a field whose spatial correlation at
/// distance `d` is `exp(-d^2 / (2 L^2))` for correlation length `L`. A second,
/// product-specific field mixed in with weight `product_noise_weight` lets
/// several products share one underlying truth (`seed`) while disagreeing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthWeatherConfig {
    pub variable_kind: VariableKind,
    pub product_id: String,
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub cell_size_lon: f64,
    pub cell_size_lat: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    pub start_date: NaiveDate,
    pub n_days: usize,
    pub rain: RainParams,
    pub temp: TempParams,
    pub correlation_length_km: f64,
    pub seed: u64,
    pub product_seed: u64,
    pub product_noise_weight: f64,
    /// Multiplicative for rainfall, additive (degC) for temperature.
    pub bias: f64,
}

impl SynthWeatherConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GridError::InvalidConfig(m));
        if !(self.correlation_length_km > 0.0) {
            return bad(format!("correlation_length_km must be > 0, got {}", self.correlation_length_km));
        }
        let r = &self.rain;
        let (lo, hi) = (r.wet_prob_mean - r.wet_prob_amplitude.abs(), r.wet_prob_mean + r.wet_prob_amplitude.abs());
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) {
            return bad(format!("wet-day probability range [{lo}, {hi}] leaves [0, 1]"));
        }
        if !(r.gamma_shape > 0.0 && r.gamma_scale > 0.0) {
            return bad("gamma shape and scale must be > 0".into());
        }
        if !(self.temp.noise_sd_c >= 0.0) {
            return bad("temperature noise sd must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.product_noise_weight) {
            return bad("product_noise_weight must lie in [0, 1]".into());
        }
        if self.variable_kind == VariableKind::Rainfall && !(self.bias > 0.0) {
            return bad("rainfall bias is multiplicative and must be > 0".into());
        }
        self.header().validate().or_else(|e| bad(e.to_string()))
    }

    fn header(&self) -> GridHeader {
        GridHeader {
            variable_kind: self.variable_kind,
            product_id: self.product_id.clone(),
            origin_lon: self.origin_lon,
            origin_lat: self.origin_lat,
            cell_size_lon: self.cell_size_lon,
            cell_size_lat: self.cell_size_lat,
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            start_date: self.start_date,
            n_days: self.n_days,
        }
    }
}

/// Draws unit-variance Gaussian fields with a squared-exponential spatial
/// correlation by separable smoothing of padded white noise.
struct FieldSampler {
    n_rows: usize,
    n_cols: usize,
    kernel_row: Vec<f64>,
    kernel_col: Vec<f64>,
    norm: f64,
    noise: Vec<f64>,
    tmp: Vec<f64>,
}

impl FieldSampler {
    fn new(h: &GridHeader, correlation_length_km: f64) -> Self {
        // smoothing white noise with sigma s gives correlation exp(-d^2 / 4s^2)
        let sigma_km = correlation_length_km / std::f64::consts::SQRT_2;
        let center_lat = h.origin_lat - 0.5 * h.n_rows as f64 * h.cell_size_lat;
        let km_lon = h.cell_size_lon * KM_PER_DEGREE * center_lat.to_radians().cos().max(1e-6);
        let km_lat = h.cell_size_lat * KM_PER_DEGREE;
        let kernel_col = gaussian_kernel(sigma_km / km_lon);
        let kernel_row = gaussian_kernel(sigma_km / km_lat);
        let ss = |k: &[f64]| k.iter().map(|w| w * w).sum::<f64>();
        let norm = (ss(&kernel_col) * ss(&kernel_row)).sqrt();
        let (pr, pc) = (kernel_row.len() / 2, kernel_col.len() / 2);
        let (rows_p, cols_p) = (h.n_rows + 2 * pr, h.n_cols + 2 * pc);
        Self {
            n_rows: h.n_rows,
            n_cols: h.n_cols,
            kernel_row,
            kernel_col,
            norm,
            noise: vec![0.0; rows_p * cols_p],
            tmp: vec![0.0; rows_p * h.n_cols],
        }
    }

    fn sample(&mut self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        for v in self.noise.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let kc = self.kernel_col.len();
        let kr = self.kernel_row.len();
        let cols_p = self.n_cols + kc - 1;
        let rows_p = self.n_rows + kr - 1;
        // along columns
        for r in 0..rows_p {
            let src = &self.noise[r * cols_p..(r + 1) * cols_p];
            for c in 0..self.n_cols {
                self.tmp[r * self.n_cols + c] = src[c..c + kc].iter().zip(&self.kernel_col).map(|(a, w)| a * w).sum();
            }
        }
        // along rows
        for r in 0..self.n_rows {
            for c in 0..self.n_cols {
                let mut acc = 0.0;
                for (k, w) in self.kernel_row.iter().enumerate() {
                    acc += self.tmp[(r + k) * self.n_cols + c] * w;
                }
                out[r * self.n_cols + c] = acc / self.norm;
            }
        }
    }
}

fn gaussian_kernel(sigma_cells: f64) -> Vec<f64> {
    if sigma_cells < 1e-3 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma_cells).ceil() as i64;
    (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma_cells * sigma_cells)).exp())
        .collect()
}

/// Generate a synthetic stack. Deterministic for a fixed config.
pub fn synth_weather(config: &SynthWeatherConfig) -> Result<RasterStack> {
    config.validate()?;
    let header = config.header();
    let cells = header.cells_per_day();
    let mut truth_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut product_rng = ChaCha8Rng::seed_from_u64(config.product_seed);
    let mut sampler = FieldSampler::new(&header, config.correlation_length_km);
    let w = config.product_noise_weight;
    let w_truth = (1.0 - w * w).sqrt();
    let mut field_a = vec![0.0; cells];
    let mut field_b = vec![0.0; cells];
    let mut scratch = vec![0.0; cells];
    let mut values = Vec::with_capacity(header.len());
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");

    let mut mix = |sampler: &mut FieldSampler, truth_rng: &mut ChaCha8Rng, product_rng: &mut ChaCha8Rng, out: &mut [f64]| {
        sampler.sample(truth_rng, out);
        if w > 0.0 {
            sampler.sample(product_rng, &mut scratch);
            for (o, p) in out.iter_mut().zip(&scratch) {
                *o = w_truth * *o + w * p;
            }
        }
    };

    for day in 0..config.n_days {
        let date = config.start_date + Duration::days(day as i64);
        let doy = date.ordinal() as f64;
        match config.variable_kind {
            VariableKind::Rainfall => {
                let r = &config.rain;
                let phase = 2.0 * std::f64::consts::PI * (doy - r.peak_day_of_year) / 365.25;
                let p_wet = (r.wet_prob_mean + r.wet_prob_amplitude * phase.cos()).clamp(0.0, 1.0);
                // wet where the occurrence field exceeds its (1 - p) quantile
                let threshold = if p_wet <= 0.0 {
                    f64::INFINITY
                } else if p_wet >= 1.0 {
                    f64::NEG_INFINITY
                } else {
                    std_normal.inverse_cdf(1.0 - p_wet)
                };
                mix(&mut sampler, &mut truth_rng, &mut product_rng, &mut field_a);
                mix(&mut sampler, &mut truth_rng, &mut product_rng, &mut field_b);
                for (occ, amt) in field_a.iter().zip(&field_b) {
                    let v = if *occ > threshold { gamma_amount(r.gamma_shape, r.gamma_scale, *amt) * config.bias } else { 0.0 };
                    values.push(v as f32);
                }
            }
            VariableKind::TempMean | VariableKind::TempMax => {
                let t = &config.temp;
                let phase = 2.0 * std::f64::consts::PI * (doy - t.peak_day_of_year) / 365.25;
                let base = t.annual_mean_c + t.annual_amplitude_c * phase.cos() + config.bias;
                let offset = if config.variable_kind == VariableKind::TempMax { t.diurnal_half_range_c } else { 0.0 };
                mix(&mut sampler, &mut truth_rng, &mut product_rng, &mut field_a);
                values.extend(field_a.iter().map(|z| (base + offset + t.noise_sd_c * z) as f32));
            }
        }
    }
    RasterStack::new(header, values)
}

/// Gamma(shape, scale) amount from a standard-normal deviate via the
/// Wilson-Hilferty cube transform, floored at a trace amount.
fn gamma_amount(shape: f64, scale: f64, z: f64) -> f64 {
    let c = 1.0 / (9.0 * shape);
    let cube = (1.0 - c + z * c.sqrt()).max(0.0).powi(3);
    (shape * scale * cube).max(0.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(values: Vec<f32>, n_days: usize, n_rows: usize, n_cols: usize) -> RasterStack {
        RasterStack::new(
            GridHeader {
                variable_kind: VariableKind::Rainfall,
                product_id: "t".into(),
                origin_lon: 0.0,
                origin_lat: 10.0,
                cell_size_lon: 1.0,
                cell_size_lat: 1.0,
                n_rows,
                n_cols,
                start_date: NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(),
                n_days,
            },
            values,
        )
        .unwrap()
    }

    #[test]
    fn single_value_byte_layout() {
        let s = tiny(vec![5.0], 1, 1, 1);
        let b = s.to_bytes();
        // 4 magic + 2 version + 1 kind + 1 len + 1 id + 32 georef + 16 dims/date
        let header_len = 4 + 2 + 1 + 1 + 1 + 32 + 16;
        assert_eq!(b.len(), header_len + 4);
        assert_eq!(&b[header_len..], &5.0f32.to_le_bytes());
        assert_eq!(&b[..4], b"AGWX");
        assert_eq!(&b[4..6], &[1, 0]);
        // 2000-01-01 is day 10957 after the epoch
        assert_eq!(&b[header_len - 8..header_len - 4], &10957i32.to_le_bytes());
    }

    #[test]
    fn bad_magic() {
        let mut b = tiny(vec![1.0], 1, 1, 1).to_bytes();
        b[..4].copy_from_slice(b"XXXX");
        assert!(matches!(RasterStack::from_bytes(&b), Err(GridError::BadMagic)));
        assert!(matches!(RasterStack::from_bytes(b"AG"), Err(GridError::BadMagic)));
    }

    #[test]
    fn truncated_payload() {
        let s = tiny(vec![1.0; 3 * 4], 3, 2, 2);
        let mut b = s.to_bytes();
        // declare 10 days while shipping 3
        let pos = b.len() - 12 * 4 - 4;
        b[pos..pos + 4].copy_from_slice(&10u32.to_le_bytes());
        assert!(matches!(RasterStack::from_bytes(&b), Err(GridError::TruncatedPayload { .. })));
    }

    #[test]
    fn zero_dimension_header() {
        let s = tiny(vec![1.0], 1, 1, 1);
        let mut b = s.to_bytes();
        let pos = b.len() - 4 - 4;
        b[pos..pos + 4].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(RasterStack::from_bytes(&b), Err(GridError::InvalidHeader(_))));
    }

    #[test]
    fn cell_of_examples() {
        let s = tiny(vec![0.0; 100], 1, 10, 10);
        assert_eq!(s.cell_of(GeoPoint::new(0.25, 9.75)).unwrap(), (0, 0));
        // interior boundary goes east / south
        assert_eq!(s.cell_of(GeoPoint::new(1.0, 9.5)).unwrap(), (0, 1));
        assert_eq!(s.cell_of(GeoPoint::new(0.5, 9.0)).unwrap(), (1, 0));
        assert!(matches!(s.cell_of(GeoPoint::new(-5.0, 9.0)), Err(GridError::OutOfDomain { .. })));
        assert!(s.cell_of(GeoPoint::new(10.0, 5.0)).is_err());
    }

    #[test]
    fn value_at_layout() {
        let mut v = vec![0.0; 2 * 2 * 3];
        v[0] = 7.5;
        v[6] = 1.25; // day 1, (0, 0) sits at offset n_rows * n_cols
        let s = tiny(v, 2, 2, 3);
        let d0 = s.header().start_date;
        assert_eq!(s.value_at(d0, 0, 0).unwrap(), 7.5);
        assert_eq!(s.value_at(d0 + Duration::days(1), 0, 0).unwrap(), 1.25);
        assert!(matches!(s.value_at(d0 + Duration::days(2), 0, 0), Err(GridError::DateOutOfRange(_))));
        assert!(matches!(s.value_at(d0, 2, 0), Err(GridError::IndexOutOfRange { .. })));
    }

    #[test]
    fn negative_rain_rejected() {
        let h = tiny(vec![0.0], 1, 1, 1).header().clone();
        assert!(matches!(RasterStack::new(h, vec![-1.0]), Err(GridError::NegativeRainfall { .. })));
    }

    #[test]
    fn shortening_for_blinding() {
        let mut h = tiny(vec![0.0], 1, 1, 1).header().clone();
        h.start_date = NaiveDate::from_ymd_opt(1982, 12, 30).unwrap();
        h.n_days = 4;
        let s = RasterStack::new(h, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(!s.is_blinded());
        let b = s.shortened_to(BLINDING_START).unwrap();
        assert!(b.is_blinded());
        assert_eq!(b.values(), &[3.0, 4.0]);
    }

    #[test]
    fn catalogue_sizes() {
        let cat = ProductSpec::catalogue();
        assert_eq!(cat.iter().filter(|p| p.variable_kind == VariableKind::Rainfall).count(), 6);
        assert_eq!(cat.iter().filter(|p| p.variable_kind != VariableKind::Rainfall).count(), 3);
        assert!(ProductSpec::new("x", VariableKind::Rainfall, (0.3, 0.3), false).is_err());
    }

    #[test]
    fn gamma_transform_is_monotone() {
        let mut prev = 0.0;
        for i in -30..30 {
            let a = gamma_amount(0.8, 10.0, i as f64 / 10.0);
            assert!(a >= prev);
            prev = a;
        }
    }
}
