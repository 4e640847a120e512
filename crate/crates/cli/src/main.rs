use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pipeline::{export_plotdata, parse_stages, run_pipeline, ExportKind, Preset, RunConfig};

#[derive(Parser)]
#[command(name = "pipeline", version, about = "Landscape modeling, sensing simulation and reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run pipeline stages into an output directory.
    Run {
        /// JSON config; without it the full preset is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated subset of model,simulate,filter,reconstruct,evaluate,report, or `all`.
        #[arg(long, default_value = "all")]
        stages: String,
        /// Master seed for the trial plan and clustering.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write plot-ready CSV from an artifact.
    Export {
        /// landscape_slice, force_vs_x or error_bars.
        #[arg(long)]
        kind: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Slice positions in mm for landscape_slice.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = pipeline::export::SLICE_X)]
        x: Vec<f64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> pel::Result<()> {
    match cli.command {
        Command::Run {
            config,
            stages,
            seed,
            out,
        } => {
            let mut cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::preset(Preset::Full),
            };
            if let Some(seed) = seed {
                cfg = cfg.with_seed(seed);
            }
            let summary = run_pipeline(&cfg, &parse_stages(&stages)?, &out)?;
            for t in &summary.timings {
                log::info!("{:<12} {:>8.1} s", t.stage.as_str(), t.seconds);
            }
            Ok(())
        }
        Command::Export { kind, input, out, x } => export_plotdata(kind.parse::<ExportKind>()?, &input, &out, &x),
    }
}
