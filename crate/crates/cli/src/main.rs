use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing::Level;
use twinwall::config::{Config, LoadError};

mod services;
mod tools;

/// Factory telemetry, analysis and point-cloud relay services.
#[derive(Debug, Parser)]
#[command(name = "twinwall", version)]
struct Cli {
    /// Service config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true)]
    log_level: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run a distribution hub.
    Hub,
    /// Run the message broker.
    Broker,
    /// Run the analysis engine against a broker.
    Analysis,
    /// Run the simulator against a broker and hub.
    Sim {
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Ignore real-time pacing.
        #[arg(long)]
        fast: bool,
    },
    /// Run every service in-process on one scenario.
    Demo {
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Model and rules file; the built-in cap-transfer model otherwise.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Rules file, when separate from the model file.
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Wall seconds per simulated second; 0 runs flat out.
        #[arg(long, default_value_t = 0.01)]
        time_scale: f64,
    },
    /// Measure JSON and binary codec throughput.
    BenchCodec {
        #[arg(long, default_value_t = 100_000)]
        points: usize,
        #[arg(long, default_value_t = 20)]
        reps: u32,
    },
    /// Measure hub relay rate and latency over loopback.
    BenchHub {
        #[arg(long, default_value_t = 4)]
        clients: usize,
        #[arg(long, default_value_t = 10.0)]
        fps: f64,
        #[arg(long, default_value_t = 5.0)]
        seconds: f64,
        #[arg(long, default_value_t = 100_000)]
        points: usize,
    },
    /// Transcode a frame between JSON (`.json`) and binary (anything else).
    Convert { input: PathBuf, output: PathBuf },
}

/// Failure classes and their exit codes.
#[derive(Debug)]
pub enum Failure {
    Runtime(String),
    Config(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Config(_) => 2,
        }
    }
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        Failure::Config(e.to_string())
    }
}

pub type Outcome = Result<(), Failure>;

fn load_config(cli: &Cli) -> Result<Config, Failure> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    cfg.check_files()?;
    Ok(cfg)
}

fn init_logging(level: &str) -> Result<(), Failure> {
    let level: Level = level.parse().map_err(|_| Failure::Config(format!("unknown log level {level:?}")))?;
    let ansi = std::io::IsTerminal::is_terminal(&std::io::stderr());
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_ansi(ansi)
        .with_target(false)
        .init();
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load_config(&cli).and_then(|cfg| {
        init_logging(cli.log_level.as_deref().unwrap_or(&cfg.log.level))?;
        let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
        rt.block_on(dispatch(&cli, cfg))
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Runtime(m) => eprintln!("error: {m}"),
                Failure::Config(m) => eprintln!("config error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

async fn dispatch(cli: &Cli, cfg: Config) -> Outcome {
    match &cli.cmd {
        Cmd::Hub => services::hub(&cfg).await,
        Cmd::Broker => services::broker(&cfg).await,
        Cmd::Analysis => services::analysis(&cfg).await,
        Cmd::Sim { scenario, fast } => services::sim(&cfg, scenario.as_deref(), cli.seed, *fast).await,
        Cmd::Demo { scenario, model, rules, time_scale } => {
            tools::demo(&cfg, scenario.as_deref(), model.as_deref(), rules.as_deref(), cli.seed, *time_scale).await
        }
        Cmd::BenchCodec { points, reps } => tools::bench_codec(*points, *reps),
        Cmd::BenchHub { clients, fps, seconds, points } => tools::bench_hub(*clients, *fps, *seconds, *points).await,
        Cmd::Convert { input, output } => tools::convert(input, output),
    }
}
