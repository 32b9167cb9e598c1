//! Daily rainfall for one household under each of the ten extraction
//! variants.

use agwx::config::{Config, RawConfig};
use agwx::extract::{extract_for_household, DateRange, ObfuscationScheme};
use agwx::pipeline::build_world;

const CONFIG: &str = "
[countries]
names = eth
eth.origin = 38.0,9.6
[products]
rain = chirps
[schemes]
use = all
[metrics]
use = rain_total
[specs]
use = 3
[weather]
start = 2014-01-01
end = 2015-12-31
[geo]
households = 40
[outputs]
dir = unused
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = Config::from_raw(&RawConfig::parse(CONFIG)?)?;
    let world = build_world(&cfg)?;
    let eth = &world.countries[0];
    let stack = &eth.products["chirps"].main;
    let hh = &eth.households[0];
    println!("household {} in {} / {} at ({:.4}, {:.4})", hh.hh_id, hh.ea_id, hh.admin_id, hh.location.lon, hh.location.lat);
    for scheme in ObfuscationScheme::ALL {
        let feature = eth.ctx.resolve_feature(scheme, &hh.hh_id)?;
        let series = extract_for_household(stack, &eth.ctx, scheme, &hh.hh_id, DateRange::whole(stack.header()))?;
        let total: f64 = series.values.iter().sum();
        println!("{:>2} {:<16} {:>8.1} mm over two years  {feature:?}", scheme.number(), scheme.name(), total);
    }
    Ok(())
}
