use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use colearn_cli::config::{ConfigError, Mode, RunConfig};
use colearn_cli::harness::{self, HarnessError};

#[derive(Parser)]
#[command(
    name = "colearn",
    version,
    about = "Co-learning simulator and baselines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the mode named in the config (colearn, vanilla, ensemble or ablate).
    Run(Common),
    /// Run all four rate/epoch strategy combinations.
    Ablate(Common),
    /// Write the K training shards of one seed as CSV files.
    Partition(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: PathBuf,
    /// Seed to run; repeat for several. Overrides `seeds` in the config.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override a config key, e.g. `--set eta=0.05`. Values are TOML.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn load(common: &Common, mode: Option<Mode>) -> Result<RunConfig, ConfigError> {
    let mut overrides = common.overrides.clone();
    if let Some(Mode::Ablate) = mode {
        overrides.push("mode=\"ablate\"".into());
    }
    if !common.seeds.is_empty() {
        let list: Vec<String> = common.seeds.iter().map(u64::to_string).collect();
        overrides.push(format!("seeds=[{}]", list.join(",")));
    }
    RunConfig::load(&common.config, &overrides)
}

#[cfg(feature = "parallel")]
fn configure_threads() -> Result<(), ConfigError> {
    let Ok(value) = std::env::var("COLEARN_THREADS") else {
        return Ok(());
    };
    let bad = |m: String| ConfigError {
        field: "COLEARN_THREADS".into(),
        message: m,
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| bad(format!("expected a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| bad(e.to_string()))
}

#[cfg(not(feature = "parallel"))]
fn configure_threads() -> Result<(), ConfigError> {
    Ok(())
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    configure_threads()?;
    match cli.command {
        Command::Run(c) => {
            let cfg = load(&c, None)?;
            harness::run(&cfg, &c.out)?;
        }
        Command::Ablate(c) => {
            let cfg = load(&c, Some(Mode::Ablate))?;
            harness::run(&cfg, &c.out)?;
        }
        Command::Partition(c) => {
            let cfg = load(&c, None)?;
            for &seed in &cfg.seeds {
                let dir = if cfg.seeds.len() == 1 {
                    c.out.clone()
                } else {
                    c.out.join(format!("seed{seed}"))
                };
                harness::partition(&cfg, seed, &dir)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
