use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ldmi::config::PipelineConfig;
use ldmi::pipeline::{
    cmd_analyze, cmd_evaluate, cmd_ingest, cmd_report, cmd_synthesize, cmd_train, AnalyzeLevel,
};

/// Dual-level multi-interest recommendation pipeline.
#[derive(Parser)]
#[command(name = "ldmi", version, about)]
struct Cli {
    /// TOML run configuration.
    #[arg(short, long, global = true, default_value = "ldmi.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw interactions, apply the k-core filter, and write the
    /// canonical log and chronological split.
    Ingest,
    /// Cluster item titles into semantic interests (real users or
    /// synthesized users).
    Analyze {
        #[arg(long, value_enum, default_value_t = Level::Individual)]
        level: Level,
    },
    /// Build user cliques and select synthesized users by weighted coverage.
    Synthesize,
    /// Fit the model and write a checkpoint plus loss trace.
    Train,
    /// Score the checkpoint and the popularity baseline on the test split.
    Evaluate,
    /// Render a comparison table over every evaluated run in the output
    /// directory.
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Individual,
    Crowd,
}

fn run(cli: Cli) -> ldmi::error::Result<()> {
    let cfg = PipelineConfig::load(&cli.config)?;
    match cli.command {
        Command::Ingest => cmd_ingest(&cfg),
        Command::Analyze { level } => {
            let level = match level {
                Level::Individual => AnalyzeLevel::Individual,
                Level::Crowd => AnalyzeLevel::Crowd,
            };
            cmd_analyze(&cfg, level)
        }
        Command::Synthesize => cmd_synthesize(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Evaluate => cmd_evaluate(&cfg),
        Command::Report => {
            let table = cmd_report(&cfg)?;
            print!("{table}");
            Ok(())
        }
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
