use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cyclefocal::benchmark::{write_benchmark, BenchmarkConfig};
use cyclefocal::pipeline::{
    compare_experiments, run_pipeline, run_stage, ExperimentConfig, Mode, Overrides, PipelineError, Stage,
};
use cyclefocal::Error;

#[derive(Parser)]
#[command(name = "pipeline", version, about = "Minority synthesis + focal-loss classification experiments")]
struct Cli {
    /// Log level filter (e.g. info, debug).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage of an experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a single stage against the configured experiment directory.
    Stage {
        #[arg(value_parser = parse_stage)]
        name: Stage,
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare finished experiments.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        experiments: Vec<PathBuf>,
        /// Directory for comparison.csv and roc_overlay.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Append the published reference rows.
        #[arg(long)]
        reference: bool,
    },
    /// Synthetic benchmark utilities.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Write train/ and test/ snapshots of a synthetic two-domain dataset.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "benchmark")]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Run { config, mode, seed, out } => {
            let overrides = Overrides {
                mode,
                seed,
                output_dir: out,
            };
            let config = ExperimentConfig::load(&config)?.apply(&overrides);
            let report = run_pipeline(&config)?;
            println!(
                "{}: AUC {:.2}%  sensitivity {:.2}%  FN {}  ({})",
                config.mode,
                report.auc * 100.0,
                report.sensitivity * 100.0,
                report.counts.fn_,
                config.output_dir.display()
            );
        }
        Command::Stage { name, config } => {
            let config = ExperimentConfig::load(&config)?;
            run_stage(name, &config)?;
            println!("{name}: done ({})", config.output_dir.display());
        }
        Command::Report {
            experiments,
            out,
            reference,
        } => {
            let mut table = compare_experiments(&experiments)?;
            if reference {
                table = table.with_reference_rows();
            }
            print!("{}", table.render());
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
                let csv = dir.join("comparison.csv");
                std::fs::write(&csv, table.to_csv()).map_err(|e| io(&csv, e))?;
                let roc = dir.join("roc_overlay.csv");
                std::fs::write(&roc, table.roc_overlay_csv()).map_err(|e| io(&roc, e))?;
            }
        }
        Command::Bench {
            command: BenchCommand::Generate { config, out },
        } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| Error::Config(format!("{}: {e}", config.display())))?;
            let bench: BenchmarkConfig =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", config.display())))?;
            let (train, test) = write_benchmark(&out, &bench)?;
            println!("wrote {} train and {} test samples to {}", train.len(), test.len(), out.display());
        }
    }
    Ok(())
}

fn io(path: &std::path::Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
