//! Generate a synthetic rainfall stack, write it as AGWX, read it back and
//! look up a cell.

use agwx::geo::GeoPoint;
use agwx::grid::{load_raster_stack, save_raster_stack, synth_weather, RainParams, SynthWeatherConfig, TempParams, VariableKind};
use chrono::NaiveDate;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = SynthWeatherConfig {
        variable_kind: VariableKind::Rainfall,
        product_id: "chirps".into(),
        origin_lon: 36.0,
        origin_lat: 9.0,
        cell_size_lon: 0.1,
        cell_size_lat: 0.1,
        n_rows: 20,
        n_cols: 20,
        start_date: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
        n_days: 365,
        rain: RainParams::default(),
        temp: TempParams::default(),
        correlation_length_km: 50.0,
        seed: 42,
        product_seed: 43,
        product_noise_weight: 0.3,
        bias: 1.0,
    };
    let stack = synth_weather(&config)?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("chirps.agwx");
    save_raster_stack(&stack, &path)?;
    let back = load_raster_stack(&path)?;
    println!("wrote {} bytes, round trip identical: {}", std::fs::metadata(&path)?.len(), back.to_bytes() == stack.to_bytes());

    let p = GeoPoint::new(36.73, 8.52);
    let (row, col) = back.cell_of(p)?;
    let july: Vec<f32> = back.cell_series(row, col, 181, 31).collect();
    println!("point ({}, {}) is cell ({row}, {col}); July total {:.1} mm", p.lon, p.lat, july.iter().sum::<f32>());
    Ok(())
}
