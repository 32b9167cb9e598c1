//! Compare every rainfall metric against total rainfall with the weak and
//! strong confidence-interval tests, and export one specification curve.

use agwx::battery::{reference_comparison, spec_curve_export, strong_test, weak_test, EstimateCI, SignificanceRule};
use agwx::config::{Config, RawConfig};
use agwx::metrics::MetricId;
use agwx::pipeline::{battery_results, build_world, world_metrics, world_survey};
use agwx::survey::{MetricTable, Outcome};

const CONFIG: &str = "
[run]
seed = 8
[countries]
names = eth
eth.origin = 38.0,9.6
[products]
rain = chirps
[schemes]
use = 3
[metrics]
use = rain
[specs]
use = all
[weather]
start = 1995-01-01
end = 2016-12-31
[geo]
households = 300
[battery]
outcomes = yield, value
[outputs]
dir = unused
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let a = EstimateCI::new(1.0, 0.5, 1.5)?;
    let b = EstimateCI::new(1.6, 1.5, 1.7)?;
    println!("closed intervals touching at 1.5: weak {} strong {}", weak_test(&b, &a), strong_test(&b, &a));

    let cfg = Config::from_raw(&RawConfig::parse(CONFIG)?)?;
    let world = build_world(&cfg)?;
    let survey = world_survey(&cfg, &world)?;
    let table = MetricTable::from_records(world_metrics(&cfg, &world)?)?;
    let rows = battery_results(&cfg, &survey, &table, 0)?;

    println!("{:<18} {:>6} {:>5} {:>7}", "metric", "cells", "weak", "strong");
    for v in reference_comparison(&rows, MetricId::RainTotal)? {
        println!("{:<18} {:>6} {:>5} {:>7}", v.metric.name(), v.cells, v.weak, v.strong);
    }

    let curve = spec_curve_export(&rows, |r| r.key.outcome == Outcome::Yield, SignificanceRule::Joint)?;
    println!("spec curve, {} points sorted by estimate:", curve.len());
    for p in curve.iter().step_by(8) {
        println!(
            "  {:>3} {:<18} spec {} beta {:>8.4} [{:>8.4}, {:>8.4}] significant {}",
            p.rank,
            p.key.selection.name(),
            p.key.spec.number(),
            p.ci.estimate,
            p.ci.lower,
            p.ci.upper,
            p.significant
        );
    }
    Ok(())
}
