//! `fdscope`: configuration-driven front end for designing diffusers,
//! simulating PSFs, forward projection, reconstruction and the studies.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fdscope::config::{ExperimentConfig, StudyKind};

#[derive(Debug, Parser)]
#[command(name = "fdscope", version, about = "Fourier-plane diffuser microscope simulator")]
struct Cli {
    /// Experiment configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print and save the design report.
    Design,
    /// Generate the diffuser surface.
    Surface,
    /// Simulate the on-axis PSF stack.
    Psfs {
        /// Use a stored surface instead of generating one.
        #[arg(long)]
        surface: Option<PathBuf>,
    },
    /// Project a volume through a PSF stack.
    Forward {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        psfs: PathBuf,
    },
    /// Reconstruct a volume from a measurement.
    Reconstruct {
        #[arg(long)]
        measurement: PathBuf,
        #[arg(long)]
        psfs: PathBuf,
    },
    /// Run a study: resolution, fov or depthrange.
    Study {
        study: Option<String>,
    },
}

pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<fdscope::Error> for CliError {
    fn from(e: fdscope::Error) -> Self {
        match e {
            fdscope::Error::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            ExperimentConfig::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = Some(o.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = load_config(&cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    let ctx = commands::Context::new(cfg)?;
    match cli.command {
        Command::Design => commands::design(&ctx),
        Command::Surface => commands::surface(&ctx),
        Command::Psfs { surface } => commands::psfs(&ctx, surface.as_deref()),
        Command::Forward { volume, psfs } => commands::forward(&ctx, &volume, &psfs),
        Command::Reconstruct { measurement, psfs } => commands::reconstruct(&ctx, &measurement, &psfs),
        Command::Study { study } => {
            let kind = match study {
                Some(s) => s.parse::<StudyKind>().map_err(|e| CliError::Usage(e.to_string()))?,
                None => ctx.config.study.kind.ok_or_else(|| {
                    CliError::Usage("no study named (resolution, fov, depthrange) and none in the config".into())
                })?,
            };
            commands::study(&ctx, kind)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
