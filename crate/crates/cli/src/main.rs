//! `apdf-rank`: APDF matrices, dynamic ranking, the alignment objective and
//! preference metrics from the command line.
//!
//! Exit codes: 0 success, 2 validation, 3 I/O, 4 numerically degenerate input.

mod args;
mod commands;
mod embedding;
mod manifest;

use std::process::ExitCode;

use anyhow::Result;
use apdf_rank::ErrorCategory;
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "apdf-rank", version, about = "Multi-attribute preference ranking for QA pools")]
struct Cli {
    /// Worker threads; defaults to available parallelism. Output does not depend on it.
    #[arg(long, global = true, env = "APDF_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a Posts.xml dump into filtered, gold-ranked records.
    Ingest(commands::IngestArgs),
    /// Write hashed n-gram embeddings for records (and generations) as TSV.
    Embed(commands::EmbedCmdArgs),
    /// Dynamic ranking per record.
    Rank(commands::RankArgs),
    /// Alignment objective per record from token log-probabilities.
    Loss(commands::LossCmdArgs),
    /// Train the toy byte-bigram policy.
    TrainToy(commands::TrainArgs),
    /// PrefHit, PrefRecall, SaferHit, BLEU and Rouge-L for generations.
    Eval(commands::EvalArgs),
    /// One record's APDF matrix as CSV.
    ExportHeatmap(commands::HeatmapArgs),
}

fn run(cli: Cli) -> Result<()> {
    let workers = match cli.workers {
        Some(0) => return Err(apdf_rank::Error::invalid("--workers must be >= 1").into()),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    pool.install(|| match &cli.command {
        Command::Ingest(a) => commands::ingest_cmd(a),
        Command::Embed(a) => commands::embed_cmd(a),
        Command::Rank(a) => commands::rank_cmd(a),
        Command::Loss(a) => commands::loss_cmd(a),
        Command::TrainToy(a) => commands::train_cmd(a),
        Command::Eval(a) => commands::eval_cmd(a),
        Command::ExportHeatmap(a) => commands::heatmap_cmd(a),
    })
}

fn category(err: &anyhow::Error) -> ErrorCategory {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<apdf_rank::Error>() {
            return e.category();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ErrorCategory::Io;
        }
    }
    ErrorCategory::Validation
}

/// Error chain joined by `: `, skipping causes already spelled out by their parent.
fn message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let cat = category(&err);
            eprintln!("error[{}]: {}", cat.as_str(), message(&err));
            ExitCode::from(match cat {
                ErrorCategory::Validation => 2,
                ErrorCategory::Io => 3,
                ErrorCategory::Degenerate => 4,
            })
        }
    }
}
