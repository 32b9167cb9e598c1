//! All 22 season metrics at one location, with long-run statistics over the
//! whole record.

use agwx::config::{Config, RawConfig};
use agwx::extract::{extract_feature, DateRange, FeatureRef, PointMethod};
use agwx::metrics::{location_rain_metrics, location_temp_metrics, GddBounds, MetricId};
use agwx::pipeline::build_world;

const CONFIG: &str = "
[countries]
names = mwi
mwi.origin = 33.5,-13.0
mwi.season = 11-01..03-31
mwi.rain_peak_doy = 15
[products]
rain = chirps
temp = era5_t
[schemes]
use = 5
[metrics]
use = all
[specs]
use = 3
[weather]
start = 1983-01-01
end = 2016-12-31
n_rows = 4
n_cols = 4
[geo]
households = 10
households_per_ea = 10
admin_blocks = 1
[outputs]
dir = unused
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = Config::from_raw(&RawConfig::parse(CONFIG)?)?;
    let world = build_world(&cfg)?;
    let mwi = &world.countries[0];
    let window = mwi.config.season;
    let point = FeatureRef::Point { point: mwi.households[0].location, method: PointMethod::Bilinear };
    let years = [2010, 2012, 2014];

    let rain = &mwi.products["chirps"].main;
    let rain_series = extract_feature(rain, &point, DateRange::whole(rain.header()))?;
    let temp = &mwi.products["era5_t"];
    let temp_series = extract_feature(&temp.main, &point, DateRange::whole(temp.main.header()))?;
    let max_series = temp.max.as_ref().map(|m| extract_feature(m, &point, DateRange::whole(m.header()))).transpose()?;

    let rain_m = location_rain_metrics(&rain_series, &window, &years);
    let temp_m = location_temp_metrics(&temp_series, max_series.as_ref(), &window, &years, GddBounds::default());
    print!("{:<22}", "metric");
    years.iter().for_each(|y| print!("{:>12}", format!("{y}/{}", y + 1)));
    println!();
    for id in MetricId::ALL {
        print!("{:<22}", id.name());
        for i in 0..years.len() {
            let v = rain_m[i].and_then(|m| m.get(id)).or_else(|| temp_m[i].and_then(|m| m.get(id)));
            print!("{:>12}", v.map_or("missing".to_string(), |v| format!("{v:.3}")));
        }
        println!();
    }
    Ok(())
}
