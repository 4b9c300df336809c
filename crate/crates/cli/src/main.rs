//! `attnlab` command-line interface. Every subcommand prints one JSON
//! document on stdout and writes its artifacts under `--out`.

mod corpus;
mod experiment;
mod overrides;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "attnlab", version, about = "Attention-only decoder dataset-scaling lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Zipf corpus and write train/validation shards.
    SynthCorpus(corpus::SynthArgs),
    /// Read, clean and deduplicate articles from CSV/TSV/JSONL.
    Ingest(corpus::IngestArgs),
    /// Encode ingested articles with a byte-level BPE vocabulary.
    Tokenize(corpus::TokenizeArgs),
    /// MAL-filter, chunk, pad and split token lists into shards.
    Shard(corpus::ShardArgs),
    /// Build a nested subset plan over a training shard.
    SubsetPlan(corpus::PlanArgs),
    /// JS-divergence and per-token relative-error reports per level.
    Analyze(report::AnalyzeArgs),
    /// Train one configuration (one or more seeds).
    Train(experiment::TrainArgs),
    /// Evaluate a checkpoint on a shard.
    Eval(experiment::EvalArgs),
    /// Train every level × seed of a configuration.
    Sweep(experiment::SweepArgs),
    /// Kaplan predictions per level, optionally against measured losses.
    ScalingPredict(report::PredictArgs),
    /// Smallest level reaching each fraction of full-data accuracy.
    TradeoffReport(report::TradeoffArgs),
}

pub(crate) fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Prints the summary and mirrors it to `<out>/summary.json`.
pub(crate) fn emit(out: &Path, summary: &impl Serialize) -> Result<()> {
    write_json(&out.join("summary.json"), summary)?;
    println!("{}", serde_json::to_string(summary)?);
    Ok(())
}

pub(crate) fn artifact(out: &Path, name: &str) -> PathBuf {
    out.join(name)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SynthCorpus(a) => corpus::synth(a),
        Command::Ingest(a) => corpus::ingest(a),
        Command::Tokenize(a) => corpus::tokenize(a),
        Command::Shard(a) => corpus::shard(a),
        Command::SubsetPlan(a) => corpus::plan(a),
        Command::Analyze(a) => report::analyze(a),
        Command::Train(a) => experiment::train(a),
        Command::Eval(a) => experiment::eval(a),
        Command::Sweep(a) => experiment::sweep(a),
        Command::ScalingPredict(a) => report::predict(a),
        Command::TradeoffReport(a) => report::tradeoff(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
