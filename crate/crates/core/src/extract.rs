//! Spatial features for the ten obfuscation/extraction schemes, and the three
//! ways of pulling a daily series out of a [`RasterStack`]: the containing
//! cell, bilinear interpolation between cell centres, and the zonal mean of
//! cells whose centres fall inside a polygon.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{destination, haversine_km, GeoPoint, KM_PER_DEGREE};
use crate::grid::{GridError, GridHeader, RasterStack, VariableKind};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("enumeration area has no member households")]
    EmptyEa,
    #[error("unknown household {0}")]
    UnknownHousehold(String),
    #[error("missing context: {0}")]
    MissingContext(String),
    #[error("no cell centre lies inside the zone")]
    EmptyZone,
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("unknown extraction scheme {0:?}")]
    UnknownScheme(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub type Result<T> = std::result::Result<T, ExtractError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ZonePolygon {
    Circle { center: GeoPoint, radius_km: f64 },
    Rectangle { west: f64, south: f64, east: f64, north: f64 },
}

impl ZonePolygon {
    pub fn circle(center: GeoPoint, radius_km: f64) -> Result<Self> {
        if !(radius_km > 0.0) {
            return Err(ExtractError::InvalidPolygon(format!("radius {radius_km} km must be > 0")));
        }
        Ok(ZonePolygon::Circle { center, radius_km })
    }

    pub fn rectangle(west: f64, south: f64, east: f64, north: f64) -> Result<Self> {
        if !(east > west && north > south) {
            return Err(ExtractError::InvalidPolygon(format!("rectangle [{west}, {south}, {east}, {north}] is empty")));
        }
        Ok(ZonePolygon::Rectangle { west, south, east, north })
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        match *self {
            ZonePolygon::Circle { center, radius_km } => haversine_km(center, p) <= radius_km,
            ZonePolygon::Rectangle { west, south, east, north } => {
                p.lon >= west && p.lon <= east && p.lat >= south && p.lat <= north
            }
        }
    }

    /// Degree-space box guaranteed to contain the polygon.
    fn bbox(&self) -> (f64, f64, f64, f64) {
        match *self {
            ZonePolygon::Circle { center, radius_km } => {
                let dlat = radius_km / KM_PER_DEGREE;
                let max_lat = (center.lat.abs() + dlat).min(89.9);
                let dlon = dlat / max_lat.to_radians().cos();
                (center.lon - dlon, center.lat - dlat, center.lon + dlon, center.lat + dlat)
            }
            ZonePolygon::Rectangle { west, south, east, north } => (west, south, east, north),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PointMethod {
    Simple,
    Bilinear,
}

/// The ten extraction variants: four point features under two point
/// methods, plus two zonal features.
///
/// Numbered 1..=10 in declaration order; scheme 3 ([`ObfuscationScheme::ModEaSimple`])
/// is the default once the obfuscation comparison is done.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObfuscationScheme {
    HhSimple,
    EaSimple,
    ModEaSimple,
    AdminSimple,
    HhBilinear,
    EaBilinear,
    ModEaBilinear,
    AdminBilinear,
    EaBufferZonal,
    AdminUnitZonal,
}

impl ObfuscationScheme {
    pub const ALL: [ObfuscationScheme; 10] = [
        ObfuscationScheme::HhSimple,
        ObfuscationScheme::EaSimple,
        ObfuscationScheme::ModEaSimple,
        ObfuscationScheme::AdminSimple,
        ObfuscationScheme::HhBilinear,
        ObfuscationScheme::EaBilinear,
        ObfuscationScheme::ModEaBilinear,
        ObfuscationScheme::AdminBilinear,
        ObfuscationScheme::EaBufferZonal,
        ObfuscationScheme::AdminUnitZonal,
    ];

    pub const DEFAULT: ObfuscationScheme = ObfuscationScheme::ModEaSimple;

    pub fn number(self) -> u8 {
        Self::ALL.iter().position(|s| *s == self).expect("in ALL") as u8 + 1
    }

    pub fn from_number(n: u8) -> Option<Self> {
        (1..=10).contains(&n).then(|| Self::ALL[n as usize - 1])
    }

    pub fn name(self) -> &'static str {
        match self {
            ObfuscationScheme::HhSimple => "hh_simple",
            ObfuscationScheme::EaSimple => "ea_simple",
            ObfuscationScheme::ModEaSimple => "modea_simple",
            ObfuscationScheme::AdminSimple => "admin_simple",
            ObfuscationScheme::HhBilinear => "hh_bilinear",
            ObfuscationScheme::EaBilinear => "ea_bilinear",
            ObfuscationScheme::ModEaBilinear => "modea_bilinear",
            ObfuscationScheme::AdminBilinear => "admin_bilinear",
            ObfuscationScheme::EaBufferZonal => "eabuffer_zonal",
            ObfuscationScheme::AdminUnitZonal => "adminunit_zonal",
        }
    }
}

impl fmt::Display for ObfuscationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObfuscationScheme {
    type Err = ExtractError;

    /// Accepts the snake-case name or the scheme number.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(n) = s.parse::<u8>() {
            return Self::from_number(n).ok_or_else(|| ExtractError::UnknownScheme(s.to_string()));
        }
        Self::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ExtractError::UnknownScheme(s.to_string()))
    }
}

/// A resolved spatial query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FeatureRef {
    Point { point: GeoPoint, method: PointMethod },
    Zone(ZonePolygon),
}

/// Maximum displacement radii applied when anonymising EA locations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetConfig {
    pub urban_km: f64,
    pub rural_km: f64,
    pub rural_far_km: f64,
    pub rural_far_prob: f64,
}

impl Default for OffsetConfig {
    fn default() -> Self {
        Self { urban_km: 2.0, rural_km: 5.0, rural_far_km: 10.0, rural_far_prob: 0.01 }
    }
}

impl OffsetConfig {
    pub fn none() -> Self {
        Self { urban_km: 0.0, rural_km: 0.0, rural_far_km: 0.0, rural_far_prob: 0.0 }
    }

    pub fn max_radius_km(&self, urban: bool) -> f64 {
        if urban {
            self.urban_km
        } else {
            self.rural_km.max(self.rural_far_km)
        }
    }
}

/// Displace `point` by a uniform bearing and a uniform distance up to the
/// applicable radius.
pub fn obfuscate_ea<R: Rng + ?Sized>(point: GeoPoint, urban: bool, offsets: &OffsetConfig, rng: &mut R) -> GeoPoint {
    let bearing = rng.gen_range(0.0..std::f64::consts::TAU);
    let u: f64 = rng.gen();
    let radius = if urban {
        offsets.urban_km
    } else if rng.gen::<f64>() < offsets.rural_far_prob {
        offsets.rural_far_km
    } else {
        offsets.rural_km
    };
    destination(point, bearing, u * radius)
}

/// Arithmetic mean of member locations.
pub fn ea_centerpoint(points: &[GeoPoint]) -> Result<GeoPoint> {
    if points.is_empty() {
        return Err(ExtractError::EmptyEa);
    }
    let n = points.len() as f64;
    let (slon, slat) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.lon, b + p.lat));
    Ok(GeoPoint::new(slon / n, slat / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdGeo {
    pub hh_id: String,
    pub ea_id: String,
    pub admin_id: String,
    pub location: GeoPoint,
    pub urban: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdminUnit {
    pub admin_id: String,
    pub west: f64,
    pub south: f64,
    pub east: f64,
    pub north: f64,
    pub centroid: GeoPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EaGeo {
    pub members: Vec<GeoPoint>,
    pub centerpoint: GeoPoint,
    pub modified: GeoPoint,
    pub buffer_radius_km: f64,
    pub urban: bool,
}

/// Everything needed to resolve a household under any scheme.
///
/// The modified (offset) EA centre is drawn once per EA and shared by all
/// waves.
#[derive(Debug, Clone)]
pub struct GeoContext {
    households: BTreeMap<String, HouseholdGeo>,
    eas: BTreeMap<String, EaGeo>,
    admins: BTreeMap<String, AdminUnit>,
}

/// Stable 64-bit FNV-1a, used to derive per-EA RNG streams.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl GeoContext {
    pub fn build(
        households: Vec<HouseholdGeo>,
        admins: Vec<AdminUnit>,
        offsets: &OffsetConfig,
        buffer_radius_km: f64,
        seed: u64,
    ) -> Result<Self> {
        let admins: BTreeMap<_, _> = admins.into_iter().map(|a| (a.admin_id.clone(), a)).collect();
        let mut by_ea: BTreeMap<String, Vec<&HouseholdGeo>> = BTreeMap::new();
        for h in &households {
            if !admins.contains_key(&h.admin_id) {
                return Err(ExtractError::MissingContext(format!("admin unit {} of household {}", h.admin_id, h.hh_id)));
            }
            by_ea.entry(h.ea_id.clone()).or_default().push(h);
        }
        let mut eas = BTreeMap::new();
        for (ea_id, members) in by_ea {
            let points: Vec<GeoPoint> = members.iter().map(|h| h.location).collect();
            let centerpoint = ea_centerpoint(&points)?;
            let urban = 2 * members.iter().filter(|h| h.urban).count() > members.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(ea_id.as_bytes()));
            let modified = obfuscate_ea(centerpoint, urban, offsets, &mut rng);
            eas.insert(ea_id, EaGeo { members: points, centerpoint, modified, buffer_radius_km, urban });
        }
        let mut map = BTreeMap::new();
        for h in households {
            if let Some(prev) = map.insert(h.hh_id.clone(), h) {
                return Err(ExtractError::MissingContext(format!("household {} listed twice", prev.hh_id)));
            }
        }
        Ok(Self { households: map, eas, admins })
    }

    pub fn household(&self, hh_id: &str) -> Option<&HouseholdGeo> {
        self.households.get(hh_id)
    }

    pub fn households(&self) -> impl Iterator<Item = &HouseholdGeo> {
        self.households.values()
    }

    pub fn ea(&self, ea_id: &str) -> Option<&EaGeo> {
        self.eas.get(ea_id)
    }

    pub fn admin(&self, admin_id: &str) -> Option<&AdminUnit> {
        self.admins.get(admin_id)
    }

    pub fn admins(&self) -> impl Iterator<Item = &AdminUnit> {
        self.admins.values()
    }

    pub fn len(&self) -> usize {
        self.households.len()
    }

    pub fn is_empty(&self) -> bool {
        self.households.is_empty()
    }

    /// Map a household to the spatial feature used under `scheme`.
    pub fn resolve_feature(&self, scheme: ObfuscationScheme, hh_id: &str) -> Result<FeatureRef> {
        use ObfuscationScheme::*;
        let hh = self.household(hh_id).ok_or_else(|| ExtractError::UnknownHousehold(hh_id.to_string()))?;
        let ea = || self.ea(&hh.ea_id).ok_or_else(|| ExtractError::MissingContext(format!("EA {}", hh.ea_id)));
        let admin = || self.admin(&hh.admin_id).ok_or_else(|| ExtractError::MissingContext(format!("admin {}", hh.admin_id)));
        let point = |point, method| FeatureRef::Point { point, method };
        Ok(match scheme {
            HhSimple => point(hh.location, PointMethod::Simple),
            HhBilinear => point(hh.location, PointMethod::Bilinear),
            EaSimple => point(ea()?.centerpoint, PointMethod::Simple),
            EaBilinear => point(ea()?.centerpoint, PointMethod::Bilinear),
            ModEaSimple => point(ea()?.modified, PointMethod::Simple),
            ModEaBilinear => point(ea()?.modified, PointMethod::Bilinear),
            AdminSimple => point(admin()?.centroid, PointMethod::Simple),
            AdminBilinear => point(admin()?.centroid, PointMethod::Bilinear),
            EaBufferZonal => {
                let e = ea()?;
                FeatureRef::Zone(ZonePolygon::circle(e.modified, e.buffer_radius_km)?)
            }
            AdminUnitZonal => {
                let a = admin()?;
                FeatureRef::Zone(ZonePolygon::rectangle(a.west, a.south, a.east, a.north)?)
            }
        })
    }
}

/// A requested run of days.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DateRange {
    pub start: NaiveDate,
    pub n_days: usize,
}

impl DateRange {
    pub fn new(start: NaiveDate, n_days: usize) -> Self {
        Self { start, n_days }
    }

    /// The stack's full record.
    pub fn whole(h: &GridHeader) -> Self {
        Self { start: h.start_date, n_days: h.n_days }
    }

    fn first_index(&self, h: &GridHeader) -> Result<usize> {
        let first = h.day_index(self.start)?;
        if self.n_days > 0 {
            h.day_index(self.start + Duration::days(self.n_days as i64 - 1))?;
        }
        Ok(first)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scheme: Option<ObfuscationScheme>,
    pub product_id: String,
}

/// A per-location daily series. Missing days are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct DailySeries {
    pub start: NaiveDate,
    pub values: Vec<f64>,
    pub variable_kind: VariableKind,
    pub provenance: Provenance,
}

impl DailySeries {
    pub fn end_date(&self) -> NaiveDate {
        self.start + Duration::days(self.values.len() as i64 - 1)
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().any(|v| v.is_nan())
    }
}

/// Integer cell weights for one extraction; reused across every day.
#[derive(Debug, Clone, PartialEq)]
pub struct CellWeights {
    pub cells: Vec<(usize, usize, f64)>,
}

impl CellWeights {
    fn apply(&self, stack: &RasterStack, range: DateRange, scheme: Option<ObfuscationScheme>) -> Result<DailySeries> {
        let h = stack.header();
        let first = range.first_index(h)?;
        let stride = h.cells_per_day();
        let vals = stack.values();
        let offsets: Vec<(usize, f64)> = self.cells.iter().map(|&(r, c, w)| (r * h.n_cols + c, w)).collect();
        let values = (first..first + range.n_days)
            .map(|d| {
                let base = d * stride;
                offsets.iter().map(|&(o, w)| vals[base + o] as f64 * w).sum()
            })
            .collect();
        Ok(DailySeries {
            start: range.start,
            values,
            variable_kind: h.variable_kind,
            provenance: Provenance { scheme, product_id: h.product_id.clone() },
        })
    }
}

pub fn simple_weights(h: &GridHeader, point: GeoPoint) -> Result<CellWeights> {
    let (r, c) = h.cell_of(point)?;
    Ok(CellWeights { cells: vec![(r, c, 1.0)] })
}

/// Separable bilinear weights among the four cell centres around `point`.
/// Within half a cell of the grid edge the coordinate is clamped to the edge
/// centres.
pub fn bilinear_weights(h: &GridHeader, point: GeoPoint) -> Result<CellWeights> {
    h.cell_of(point)?;
    let fx = ((point.lon - h.origin_lon) / h.cell_size_lon - 0.5).clamp(0.0, (h.n_cols - 1) as f64);
    let fy = ((h.origin_lat - point.lat) / h.cell_size_lat - 0.5).clamp(0.0, (h.n_rows - 1) as f64);
    let (c0, tx) = split_axis(fx, h.n_cols);
    let (r0, ty) = split_axis(fy, h.n_rows);
    let mut cells = Vec::with_capacity(4);
    for (dr, wy) in [(0, 1.0 - ty), (1, ty)] {
        for (dc, wx) in [(0, 1.0 - tx), (1, tx)] {
            let w = wy * wx;
            if w != 0.0 {
                cells.push((r0 + dr, c0 + dc, w));
            }
        }
    }
    Ok(CellWeights { cells })
}

fn split_axis(f: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let i0 = (f.floor() as usize).min(n - 2);
    (i0, f - i0 as f64)
}

/// Equal weights over every cell whose centre lies inside the polygon.
pub fn zonal_weights(h: &GridHeader, zone: &ZonePolygon) -> Result<CellWeights> {
    let (west, south, east, north) = zone.bbox();
    let col_lo = (((west - h.origin_lon) / h.cell_size_lon).floor() as i64 - 1).max(0);
    let col_hi = (((east - h.origin_lon) / h.cell_size_lon).ceil() as i64 + 1).min(h.n_cols as i64 - 1);
    let row_lo = (((h.origin_lat - north) / h.cell_size_lat).floor() as i64 - 1).max(0);
    let row_hi = (((h.origin_lat - south) / h.cell_size_lat).ceil() as i64 + 1).min(h.n_rows as i64 - 1);
    let mut inside = Vec::new();
    for r in row_lo..=row_hi {
        for c in col_lo..=col_hi {
            let (r, c) = (r as usize, c as usize);
            if zone.contains(h.cell_center(r, c)) {
                inside.push((r, c));
            }
        }
    }
    if inside.is_empty() {
        return Err(ExtractError::EmptyZone);
    }
    let w = 1.0 / inside.len() as f64;
    Ok(CellWeights { cells: inside.into_iter().map(|(r, c)| (r, c, w)).collect() })
}

pub fn feature_weights(h: &GridHeader, feature: &FeatureRef) -> Result<CellWeights> {
    match feature {
        FeatureRef::Point { point, method: PointMethod::Simple } => simple_weights(h, *point),
        FeatureRef::Point { point, method: PointMethod::Bilinear } => bilinear_weights(h, *point),
        FeatureRef::Zone(z) => zonal_weights(h, z),
    }
}

pub fn extract_simple(stack: &RasterStack, point: GeoPoint, range: DateRange) -> Result<DailySeries> {
    simple_weights(stack.header(), point)?.apply(stack, range, None)
}

pub fn extract_bilinear(stack: &RasterStack, point: GeoPoint, range: DateRange) -> Result<DailySeries> {
    bilinear_weights(stack.header(), point)?.apply(stack, range, None)
}

pub fn extract_zonal(stack: &RasterStack, zone: &ZonePolygon, range: DateRange) -> Result<DailySeries> {
    zonal_weights(stack.header(), zone)?.apply(stack, range, None)
}

pub fn extract_feature(stack: &RasterStack, feature: &FeatureRef, range: DateRange) -> Result<DailySeries> {
    feature_weights(stack.header(), feature)?.apply(stack, range, None)
}

/// Resolve and extract in one step, tagging the series with its scheme.
pub fn extract_for_household(
    stack: &RasterStack,
    ctx: &GeoContext,
    scheme: ObfuscationScheme,
    hh_id: &str,
    range: DateRange,
) -> Result<DailySeries> {
    let feature = ctx.resolve_feature(scheme, hh_id)?;
    feature_weights(stack.header(), &feature)?.apply(stack, range, Some(scheme))
}

/// Memoises cell weights per distinct feature; EA and admin features are
/// shared by many households.
#[derive(Debug, Default)]
pub struct WeightCache {
    map: HashMap<String, CellWeights>,
}

impl WeightCache {
    pub fn get(&mut self, h: &GridHeader, feature: &FeatureRef) -> Result<&CellWeights> {
        let key = format!("{feature:?}");
        if !self.map.contains_key(&key) {
            let w = feature_weights(h, feature)?;
            self.map.insert(key.clone(), w);
        }
        Ok(&self.map[&key])
    }

    pub fn extract(&mut self, stack: &RasterStack, feature: &FeatureRef, range: DateRange, scheme: ObfuscationScheme) -> Result<DailySeries> {
        let w = self.get(stack.header(), feature)?.clone();
        w.apply(stack, range, Some(scheme))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridHeader;

    fn grid(values: Vec<f32>, n_rows: usize, n_cols: usize) -> RasterStack {
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
                start_date: NaiveDate::from_ymd_opt(2001, 1, 1).unwrap(),
                n_days: values.len() / (n_rows * n_cols),
            },
            values,
        )
        .unwrap()
    }

    fn day1(s: &RasterStack) -> DateRange {
        DateRange::new(s.header().start_date, 1)
    }

    #[test]
    fn centerpoint_examples() {
        assert_eq!(ea_centerpoint(&[GeoPoint::new(0.0, 0.0)]).unwrap(), GeoPoint::new(0.0, 0.0));
        assert_eq!(
            ea_centerpoint(&[GeoPoint::new(0.0, 0.0), GeoPoint::new(2.0, 2.0)]).unwrap(),
            GeoPoint::new(1.0, 1.0)
        );
        assert!(matches!(ea_centerpoint(&[]), Err(ExtractError::EmptyEa)));
    }

    #[test]
    fn simple_hand_example() {
        let s = grid(vec![1.0, 2.0, 3.0, 4.0], 2, 2);
        let v = extract_simple(&s, GeoPoint::new(1.5, 9.5), day1(&s)).unwrap();
        assert_eq!(v.values, vec![2.0]);
        let west = GeoPoint::new(-1e-9, 9.5);
        assert!(matches!(extract_simple(&s, west, day1(&s)), Err(ExtractError::Grid(GridError::OutOfDomain { .. }))));
    }

    #[test]
    fn bilinear_node_and_center() {
        let s = grid(vec![1.0, 2.0, 3.0, 4.0], 2, 2);
        let at = |lon, lat| extract_bilinear(&s, GeoPoint::new(lon, lat), day1(&s)).unwrap().values[0];
        assert_eq!(at(0.5, 9.5), 1.0);
        assert_eq!(at(1.5, 8.5), 4.0);
        assert_eq!(at(1.0, 9.0), 2.5);
        // half-cell margin clamps to edge values
        assert_eq!(at(0.1, 9.9), 1.0);
        assert_eq!(at(1.0, 9.9), 1.5);
    }

    #[test]
    fn zonal_examples() {
        let s = grid(vec![1.0, 2.0, 3.0, 4.0], 2, 2);
        let r = ZonePolygon::rectangle(0.0, 8.0, 2.0, 10.0).unwrap();
        assert_eq!(extract_zonal(&s, &r, day1(&s)).unwrap().values, vec![2.5]);
        let c = ZonePolygon::circle(GeoPoint::new(1.5, 8.5), 5.0).unwrap();
        assert_eq!(extract_zonal(&s, &c, day1(&s)).unwrap().values, vec![4.0]);
        let miss = ZonePolygon::circle(GeoPoint::new(1.0, 9.0), 5.0).unwrap();
        assert!(matches!(extract_zonal(&s, &miss, day1(&s)), Err(ExtractError::EmptyZone)));
        assert!(ZonePolygon::circle(GeoPoint::new(0.0, 0.0), 0.0).is_err());
        assert!(ZonePolygon::rectangle(1.0, 0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn scheme_numbers_round_trip() {
        for (i, s) in ObfuscationScheme::ALL.iter().enumerate() {
            assert_eq!(s.number() as usize, i + 1);
            assert_eq!(s.name().parse::<ObfuscationScheme>().unwrap(), *s);
            assert_eq!(s.number().to_string().parse::<ObfuscationScheme>().unwrap(), *s);
        }
        assert_eq!(ObfuscationScheme::DEFAULT.number(), 3);
        assert!("11".parse::<ObfuscationScheme>().is_err());
    }

    fn ctx(offsets: OffsetConfig) -> GeoContext {
        let hh = |id: &str, lon, lat| HouseholdGeo {
            hh_id: id.into(),
            ea_id: "e1".into(),
            admin_id: "a1".into(),
            location: GeoPoint::new(lon, lat),
            urban: false,
        };
        GeoContext::build(
            vec![hh("h1", 0.0, 0.0), hh("h2", 2.0, 2.0)],
            vec![AdminUnit {
                admin_id: "a1".into(),
                west: -1.0,
                south: -1.0,
                east: 3.0,
                north: 3.0,
                centroid: GeoPoint::new(1.0, 1.0),
            }],
            &offsets,
            5.0,
            7,
        )
        .unwrap()
    }

    #[test]
    fn resolve_examples() {
        let c = ctx(OffsetConfig::default());
        assert_eq!(
            c.resolve_feature(ObfuscationScheme::HhSimple, "h2").unwrap(),
            FeatureRef::Point { point: GeoPoint::new(2.0, 2.0), method: PointMethod::Simple }
        );
        assert_eq!(
            c.resolve_feature(ObfuscationScheme::EaBilinear, "h1").unwrap(),
            FeatureRef::Point { point: GeoPoint::new(1.0, 1.0), method: PointMethod::Bilinear }
        );
        let modified = c.ea("e1").unwrap().modified;
        assert_eq!(
            c.resolve_feature(ObfuscationScheme::EaBufferZonal, "h1").unwrap(),
            FeatureRef::Zone(ZonePolygon::Circle { center: modified, radius_km: 5.0 })
        );
        assert!(matches!(c.resolve_feature(ObfuscationScheme::HhSimple, "zz"), Err(ExtractError::UnknownHousehold(_))));
        for s in ObfuscationScheme::ALL {
            c.resolve_feature(s, "h1").unwrap();
        }
    }

    #[test]
    fn zero_offsets_leave_ea_in_place() {
        let c = ctx(OffsetConfig::none());
        let e = c.ea("e1").unwrap();
        assert_eq!(e.modified, e.centerpoint);
    }

    #[test]
    fn missing_admin_is_context_error() {
        let h = HouseholdGeo { hh_id: "h".into(), ea_id: "e".into(), admin_id: "nope".into(), location: GeoPoint::new(0.0, 0.0), urban: true };
        assert!(matches!(
            GeoContext::build(vec![h], vec![], &OffsetConfig::default(), 5.0, 1),
            Err(ExtractError::MissingContext(_))
        ));
    }
}
