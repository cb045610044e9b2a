use std::path::{Path, PathBuf};
use std::process::ExitCode;

use accbo_cli::commands::{self, Flags};
use accbo_cli::config::load_config;
use accbo_cli::{CliError, CliResult};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "accbo", version, about = "Accelerated bilevel optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// JSON config for the command.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Number of seeds, overriding the config.
    #[arg(long)]
    seeds: Option<u64>,
    /// Base seed, overriding the config.
    #[arg(long)]
    base_seed: Option<u64>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte-Carlo check of the SNAG tracking bounds.
    SnagTrack(Common),
    /// Bias and variance of the Neumann hypergradient estimator over depths.
    Bias(Common),
    /// AccBO or baseline runs over seeds.
    Accbo(Common),
    /// Median oracle calls to target over an ε grid, with log-log slopes.
    Sweep(Common),
}

fn init_logging() -> CliResult<()> {
    let level = match std::env::var("ACCBO_LOG").as_deref() {
        Err(_) | Ok("info") => log::LevelFilter::Info,
        Ok("quiet") => log::LevelFilter::Error,
        Ok("debug") => log::LevelFilter::Debug,
        Ok(other) => {
            return Err(CliError::Config(format!("ACCBO_LOG must be quiet, info or debug, got `{other}`")));
        }
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    init_logging()?;
    let common = match &cli.command {
        Command::SnagTrack(c) | Command::Bias(c) | Command::Accbo(c) | Command::Sweep(c) => c,
    };
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let flags = Flags {
        out: common.out.clone(),
        seeds: common.seeds,
        base_seed: common.base_seed,
        base_dir: common.config.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let path = &common.config;
    match cli.command {
        Command::SnagTrack(_) => commands::snag_track(load_config(path)?, &flags).map(|_| ()),
        Command::Bias(_) => commands::bias(load_config(path)?, &flags).map(|_| ()),
        Command::Accbo(_) => commands::accbo(load_config(path)?, &flags).map(|_| ()),
        Command::Sweep(_) => commands::sweep(load_config(path)?, &flags).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
