//! Run a small regression battery across products, schemes and metrics and
//! summarise significance shares and adjusted R^2.

use agwx::battery::{r2_summary, significance_shares, write_shares_csv, GroupBy, SignificanceRule};
use agwx::config::{Config, RawConfig};
use agwx::pipeline::{battery_results, build_world, world_metrics, world_survey};
use agwx::survey::MetricTable;

const CONFIG: &str = "
[run]
seed = 3
[countries]
names = eth
eth.origin = 38.0,9.6
[products]
rain = chirps, arc2
arc2.bias = 0.9
arc2.noise = 0.4
temp = era5_t
[schemes]
use = 1,3,5,10
[metrics]
use = rain_total, rain_days, dry_spell, temp_mean, gdd
[specs]
use = all
[weather]
start = 2005-01-01
end = 2016-12-31
[geo]
households = 300
[battery]
outcomes = yield, value
combos = mean_mean, total_gdd
[outputs]
dir = unused
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = Config::from_raw(&RawConfig::parse(CONFIG)?)?;
    let world = build_world(&cfg)?;
    let survey = world_survey(&cfg, &world)?;
    let table = MetricTable::from_records(world_metrics(&cfg, &world)?)?;
    let rows = battery_results(&cfg, &survey, &table, 0)?;
    let ok = rows.iter().filter(|r| r.is_ok()).count();
    println!("{} runs, {ok} fitted", rows.len());

    let by = [GroupBy::Scheme, GroupBy::Family];
    let shares = significance_shares(&rows, &by, &[0.95], SignificanceRule::Joint)?;
    write_shares_csv(&shares, &by, std::io::stdout())?;

    for r in r2_summary(&rows, GroupBy::Family)? {
        println!("{:<6} spec {} mean adj R2 {:.3} [{:.3}, {:.3}] over {} runs", r.group, r.spec.number(), r.mean, r.lower, r.upper, r.n);
    }
    Ok(())
}
