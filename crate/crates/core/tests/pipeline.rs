use agwx::battery::{enumerate_runs, read_results_csv};
use agwx::config::Config;
use agwx::pipeline::run_all;

const TINY: &str = "
[run]
seed = 11
[countries]
names = aa
aa.origin = 30.0,5.0
aa.season = 03-01..05-31
[products]
rain = chirps
temp = cpc_t
[schemes]
use = 1,3,5,10
[metrics]
use = rain_total,rain_days,temp_mean
[specs]
use = 1,3,4
[weather]
start = 2008-01-01
end = 2012-12-31
n_rows = 8
n_cols = 8
[geo]
households = 40
households_per_ea = 5
admin_blocks = 2
[survey]
years = 2009,2010,2011
[battery]
combos = mean_mean
";

#[test]
fn run_all_writes_every_output_and_one_row_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let ini = dir.path().join("tiny.ini");
    std::fs::write(&ini, TINY).unwrap();
    let out = dir.path().join("out");
    let cfg = Config::load(&ini, &[format!("outputs.dir={}", out.display())]).unwrap();
    let manifests = run_all(&cfg, true).unwrap();
    assert!(manifests.iter().all(|m| m.config_hash == cfg.hash));
    for name in ["survey.csv", "features.csv", "metrics.csv", "merged.csv", "results.csv", "shares.csv", "r2.csv", "diff_tests.csv", "spec_curve.csv"] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    assert!(out.join("weather/aa/chirps.agwx").is_file());
    let rows = read_results_csv(std::fs::File::open(out.join("results.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), enumerate_runs(&cfg.battery_config()).unwrap().len());
}
