use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "
[run]
seed = 7
[countries]
names = aa
aa.origin = 30.0,5.0
aa.season = 03-01..05-31
[products]
rain = chirps
temp = cpc_t
[schemes]
use = 1,3,10
[metrics]
use = rain_total,rain_days,temp_mean
[specs]
use = 1,3,4
[outputs]
dir = out
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

fn agwx(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agwx"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .output()
        .unwrap()
}

fn manifest_hash(out: &Path, command: &str) -> String {
    let text = std::fs::read_to_string(out.join(format!("manifest_{command}.json"))).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["config_hash"].as_str().unwrap().to_string()
}

#[test]
fn missing_section_exits_one_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.ini");
    std::fs::write(&cfg, TINY.replace("[metrics]\nuse = rain_total,rain_days,temp_mean\n", "")).unwrap();
    let o = agwx(&["battery"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("[metrics]"));
}

#[test]
fn battery_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.ini");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("out");
    for cmd in ["synth-weather", "synth-survey", "extract", "metrics", "battery"] {
        let o = agwx(&[cmd], &cfg, &out);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let first = std::fs::read(out.join("results.csv")).unwrap();
    let hash = manifest_hash(&out, "battery");
    let o = agwx(&["battery"], &cfg, &out);
    assert!(o.status.success());
    assert_eq!(std::fs::read(out.join("results.csv")).unwrap(), first);
    assert_eq!(manifest_hash(&out, "battery"), hash);
    assert_eq!(manifest_hash(&out, "synth-weather"), hash);
}

#[test]
fn battery_without_inputs_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.ini");
    std::fs::write(&cfg, TINY).unwrap();
    let o = agwx(&["battery"], &cfg, &dir.path().join("empty"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn seed_flag_changes_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.ini");
    std::fs::write(&cfg, TINY).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(agwx(&["synth-weather"], &cfg, &a).status.success());
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_agwx"));
    let o = cmd.args(["synth-weather", "--seed", "8", "--quiet", "--config"]).arg(&cfg).arg("--out").arg(&b).output().unwrap();
    assert!(o.status.success());
    assert_ne!(manifest_hash(&a, "synth-weather"), manifest_hash(&b, "synth-weather"));
}
