use std::path::PathBuf;
use std::process::ExitCode;

use agwx::config::Config;
use agwx::pipeline::{run_command, Command};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "agwx", version, about = "Weather extraction and regression battery pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic weather rasters and household geography
    SynthWeather(Common),
    /// Generate the planted-effect survey panel
    SynthSurvey(Common),
    /// Resolve every household to its feature under each scheme
    Extract(Common),
    /// Compute season metrics at every feature
    Metrics(Common),
    /// Join survey rows with metric columns
    Merge(Common),
    /// Run the regression battery
    Battery(Common),
    /// Significance shares and adjusted R^2 summaries
    Summarize(Common),
    /// Export a specification curve
    SpecCurve(Common),
    /// Weak and strong difference tests against reference metrics
    DiffTest(Common),
}

#[derive(Args)]
struct Common {
    /// INI run configuration
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. --set battery.threads=4
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides outputs.dir)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::SynthWeather(c) => (Command::SynthWeather, c),
        Cmd::SynthSurvey(c) => (Command::SynthSurvey, c),
        Cmd::Extract(c) => (Command::Extract, c),
        Cmd::Metrics(c) => (Command::Metrics, c),
        Cmd::Merge(c) => (Command::Merge, c),
        Cmd::Battery(c) => (Command::Battery, c),
        Cmd::Summarize(c) => (Command::Summarize, c),
        Cmd::SpecCurve(c) => (Command::SpecCurve, c),
        Cmd::DiffTest(c) => (Command::DiffTest, c),
    };
    let mut overrides = common.set.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("run.seed={seed}"));
    }
    if let Some(out) = &common.out {
        overrides.push(format!("outputs.dir={}", out.display()));
    }
    let cfg = match Config::load(&common.config, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run_command(command, &cfg, common.quiet) {
        Ok(m) => {
            if !common.quiet {
                eprintln!("config {} -> {} outputs", &m.config_hash[..12], m.outputs.len());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
