//! Thin CLI over the library: argument parsing and dispatch only.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hoigen::app::{cli_run, Command as AppCommand, GenerateOpts};
use hoigen::raster::BoxPx;

#[derive(Parser)]
#[command(
    name = "hoigen",
    about = "Synthetic human-object-interaction image generation: data, training, sampling, evaluation.",
    long_about = None,
    after_help = "Environment:\n  HOIGEN_OUT_ROOT  default root for run directories (default: ./runs)"
)]
struct Cli {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output run directory (overrides HOIGEN_OUT_ROOT/<run_name>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Build the synthetic train/test corpus and write manifests.
    SynthData,
    /// Train the interaction-aware mask model.
    TrainIamg,
    /// Train the mask-guided image model (stage 2 needs the mask checkpoint).
    TrainMgig,
    /// Generate images from trained checkpoints.
    Generate {
        /// Interaction verb, prompt, or category id.
        #[arg(long)]
        category: Option<String>,
        /// Number of images.
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Test-split record supplying the reference crops.
        #[arg(long)]
        record: Option<usize>,
        /// Background image (PNG, 64x64); requires --box.
        #[arg(long)]
        bg: Option<PathBuf>,
        /// Union box x0,y0,x1,y1 in canvas pixels; requires --bg.
        #[arg(long, value_parser = parse_box, value_name = "x0,y0,x1,y1")]
        r#box: Option<BoxPx>,
        /// Explicit human reference crop (PNG).
        #[arg(long)]
        human_ref: Option<PathBuf>,
        /// Explicit object reference crop (PNG).
        #[arg(long)]
        object_ref: Option<PathBuf>,
    },
    /// Compute the metric report plus its baseline report.
    Evaluate,
    /// Query the mask bank by free-form text.
    RetrieveMask {
        #[arg(long)]
        query: String,
    },
    /// Assert the quality orderings between two reports.
    CompareReports { ours: PathBuf, baseline: PathBuf },
    /// Micro end-to-end pipeline with structural checks.
    Smoke,
    /// Full acceptance suite: report plus pass/fail ledger.
    Accept,
}

fn parse_box(s: &str) -> Result<BoxPx, String> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    if parts.len() != 4 {
        return Err("expected x0,y0,x1,y1".into());
    }
    if parts[0] > parts[2] || parts[1] > parts[3] {
        return Err("box corners out of order".into());
    }
    Ok(BoxPx {
        x0: parts[0],
        y0: parts[1],
        x1: parts[2],
        y1: parts[3],
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Commands::SynthData => AppCommand::SynthData,
        Commands::TrainIamg => AppCommand::TrainIamg,
        Commands::TrainMgig => AppCommand::TrainMgig,
        Commands::Generate {
            category,
            count,
            record,
            bg,
            r#box,
            human_ref,
            object_ref,
        } => AppCommand::Generate(GenerateOpts {
            category,
            count,
            record,
            bg,
            bbox: r#box,
            human_ref,
            object_ref,
        }),
        Commands::Evaluate => AppCommand::Evaluate,
        Commands::RetrieveMask { query } => AppCommand::RetrieveMask { query },
        Commands::CompareReports { ours, baseline } => {
            AppCommand::CompareReports { ours, baseline }
        }
        Commands::Smoke => AppCommand::Smoke,
        Commands::Accept => AppCommand::Accept,
    };
    let code = cli_run(
        command,
        cli.config.as_deref(),
        cli.seed,
        cli.out.as_deref(),
    );
    ExitCode::from(code as u8)
}
