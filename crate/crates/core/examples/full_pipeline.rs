//! Every pipeline stage in order on the desk configuration, writing to a
//! temporary directory. Pass a directory to keep the outputs.

use agwx::config::Config;
use agwx::pipeline::run_all;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ini = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/config/desk.ini");
    let tmp = tempfile::tempdir()?;
    let out = std::env::args().nth(1).unwrap_or_else(|| tmp.path().display().to_string());
    let cfg = Config::load(ini, &[format!("outputs.dir={out}")])?;
    for m in run_all(&cfg, true)? {
        let secs: f64 = m.timings.iter().map(|t| t.seconds).sum();
        println!("{:<14} {:>6.2}s  {} outputs", m.command, secs, m.outputs.len());
    }
    println!("config hash {}", cfg.hash);
    println!("outputs in {out}");
    Ok(())
}
