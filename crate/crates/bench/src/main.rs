use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use semcom_bench::config::ExperimentConfig;
use semcom_bench::{experiments, plot};

/// Lite semantic communication experiments.
#[derive(Parser)]
#[command(name = "semcom", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Check a config file and list every problem found.
    Validate { config: PathBuf },
    /// Write the plot table of one figure from a results file.
    Plot {
        csv: PathBuf,
        /// fig5, fig6, fig7, fig8, fig9, fig10 or table3.
        figure: String,
        /// Output path; defaults to `<csv stem>.<figure>.csv` next to the input.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let summary = experiments::run(cfg)?;
            println!("{} points, {} rows -> {}", summary.points, summary.rows, summary.results.display());
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            println!("{}: ok ({})", config.display(), cfg.experiment);
        }
        Command::Plot { csv, figure, out } => {
            let out = out.unwrap_or_else(|| plot::default_output(&csv, &figure));
            let n = plot::emit_plotdata(&csv, &figure, &out)?;
            println!("{n} points -> {}", out.display());
        }
    }
    Ok(())
}
