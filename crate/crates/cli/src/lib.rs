//! Operator surface: `build-index`, `generate`, `eval`, and `plan-stats`,
//! all driven by one TOML configuration file. Exposed as a library so
//! integration tests can run commands in-process.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "longform", about = "Retrieval-augmented long-form article generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the outline-exemplar index from a JSON Lines corpus.
    BuildIndex {
        /// Corpus file: one {id, title, outline_text, summary?} per line.
        #[arg(long)]
        corpus: PathBuf,
        /// Where to write the index.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Generate an article for a topic.
    Generate {
        #[arg(long)]
        topic: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Force all providers into mock mode with this fixture directory.
        #[arg(long)]
        mock_fixtures: Option<PathBuf>,
        /// Output directory (overrides paths.output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score generated outlines/articles against gold outlines.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// JSON map of topic slug to {precision, claim_count, supported_count?}.
        #[arg(long)]
        factuality: Option<PathBuf>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate plan metrics across a run directory.
    PlanStats {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&PathBuf>) -> anyhow::Result<RunConfig> {
    match path {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

/// Runs one command; the returned code is the process exit status
/// (0 success, 1 fatal, 2 partial article).
pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::BuildIndex { corpus, out, config } => load_config(config.as_ref())
            .and_then(|config| commands::cmd_build_index(&config, &corpus, &out)),
        Command::Generate {
            topic,
            config,
            mock_fixtures,
            out,
        } => load_config(config.as_ref()).and_then(|mut config| {
            if let Some(dir) = mock_fixtures {
                config = config.with_mock_fixtures(dir);
            }
            let out_dir = out
                .or_else(|| config.paths.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("out"));
            commands::cmd_generate(&config, &topic, &out_dir)
        }),
        Command::Eval {
            generated,
            gold,
            factuality,
            out,
        } => commands::cmd_eval(&generated, &gold, factuality.as_deref(), out.as_deref()),
        Command::PlanStats { run_dir, out } => {
            commands::cmd_plan_stats(&run_dir, out.as_deref())
        }
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    }
}
