//! Points on the sphere and the few great-circle formulas the extractors need.

use serde::{Deserialize, Serialize};

/// Mean Earth radius used for every distance in the crate.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Kilometres spanned by one degree of latitude on the reference sphere.
pub const KM_PER_DEGREE: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

/// A location in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub const fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }

    pub fn is_valid(&self) -> bool {
        self.lon.is_finite()
            && self.lat.is_finite()
            && (-180.0..=180.0).contains(&self.lon)
            && (-90.0..=90.0).contains(&self.lat)
    }
}

/// Great-circle distance in kilometres (haversine).
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Point reached by travelling `distance_km` from `origin` along the initial
/// bearing `bearing_rad` (clockwise from north).
pub fn destination(origin: GeoPoint, bearing_rad: f64, distance_km: f64) -> GeoPoint {
    if distance_km == 0.0 {
        return origin;
    }
    let delta = distance_km / EARTH_RADIUS_KM;
    let lat1 = origin.lat.to_radians();
    let lon1 = origin.lon.to_radians();
    let lat2 = (lat1.sin() * delta.cos() + lat1.cos() * delta.sin() * bearing_rad.cos()).asin();
    let lon2 = lon1
        + (bearing_rad.sin() * delta.sin() * lat1.cos()).atan2(delta.cos() - lat1.sin() * lat2.sin());
    let mut lon = lon2.to_degrees();
    // normalise to [-180, 180]
    lon = (lon + 540.0).rem_euclid(360.0) - 180.0;
    GeoPoint::new(lon, lat2.to_degrees())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_degree_of_latitude() {
        let d = haversine_km(GeoPoint::new(10.0, 0.0), GeoPoint::new(10.0, 1.0));
        assert!((d - KM_PER_DEGREE).abs() < 1e-9);
    }

    #[test]
    fn destination_round_trips_distance() {
        let o = GeoPoint::new(35.2, -6.1);
        for i in 0..16 {
            let b = i as f64 * std::f64::consts::PI / 8.0;
            let p = destination(o, b, 7.5);
            assert!((haversine_km(o, p) - 7.5).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_distance_is_identity() {
        let o = GeoPoint::new(-3.3, 12.9);
        assert_eq!(destination(o, 1.0, 0.0), o);
    }
}
