use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use attnlab::analysis::seed_stats;
use attnlab::corpus::read_shard;
use attnlab::harness::{
    evaluate, multi_seed, run_experiment, run_id, train_run, LoadedInputs, RunSummary,
};
use attnlab::model::{load_checkpoint, load_frozen, FrozenSource};
use attnlab::{SequenceRecord, SubsetSpec};
use clap::Args;
use serde::Serialize;

use crate::overrides::ConfigArgs;
use crate::{artifact, create_out, emit, write_json};

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

pub fn train(a: TrainArgs) -> Result<()> {
    create_out(&a.out)?;
    let cfg = a.config.resolve(Some(&a.out))?;
    write_json(&artifact(&a.out, "config.json"), &cfg)?;
    let summary = run_experiment(&cfg)?;
    println!(
        "{}",
        serde_json::to_string(&serde_json::json!({
            "command": "train",
            "subset": cfg.subset,
            "regime": cfg.regime,
            "runs": summary.runs,
            "epoch1": summary.epoch1,
        }))?
    );
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train` (`best.safetensors` / `final.safetensors`).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the config's validation shard.
    #[arg(long)]
    shard: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    create_out(&a.out)?;
    let cfg = a.config.resolve(None)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let source: FrozenSource = cfg.frozen.parse().unwrap_or(FrozenSource::Random);
    let frozen = load_frozen(&source, &cfg.model, cfg.frozen_seed)?;
    if frozen.fingerprint() != ckpt.state.frozen_fingerprint {
        bail!(
            "frozen parts differ from the ones {} was trained with",
            a.checkpoint.display()
        );
    }
    let shard_path = a.shard.unwrap_or(cfg.val_shard.clone());
    let shard = read_shard(&shard_path)?;
    let records: Vec<&SequenceRecord> = shard.records().iter().collect();
    let result = evaluate(&frozen, &ckpt.params, &records, cfg.eval_batch_size)?;
    emit(&a.out, &serde_json::json!({
        "command": "eval",
        "checkpoint": a.checkpoint,
        "shard": shard_path,
        "run_id": ckpt.state.run_id,
        "epoch": ckpt.state.epoch,
        "loss": result.loss,
        "perplexity": result.perplexity,
        "accuracy": result.accuracy,
        "valid_tokens": result.valid_tokens,
    }))
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Subset levels to train.
    #[arg(long, value_delimiter = ',', required = true)]
    levels: Vec<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct LevelRow {
    k: u32,
    n_seeds: usize,
    loss: f64,
    loss_std: Option<f64>,
    accuracy: Option<f64>,
    epoch1_std: Option<f64>,
    seconds: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    create_out(&a.out)?;
    let mut cfg = a.config.resolve(Some(&a.out))?;
    write_json(&artifact(&a.out, "config.json"), &cfg)?;
    let loaded = LoadedInputs::load(&cfg)?;
    let inputs = loaded.inputs();
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for &k in &a.levels {
        cfg.subset = SubsetSpec::Level(k);
        let level_dir = a.out.join(format!("k{k}"));
        let (level_runs, epoch1) = if cfg.seeds.len() >= 2 {
            let m = multi_seed(&cfg, &inputs, Some(&level_dir))
                .with_context(|| format!("level {k}"))?;
            (m.runs, Some(m.epoch1.std))
        } else {
            let seed = cfg.seeds[0];
            let dir = level_dir.join(run_id(cfg.subset, seed));
            (vec![train_run(&cfg, &inputs, seed, Some(&dir))?], None)
        };
        let summaries: Vec<RunSummary> = level_runs.iter().map(RunSummary::from).collect();
        let losses: Vec<(u64, f64)> = summaries.iter().map(|s| (s.seed, s.best_val_loss)).collect();
        rows.push(LevelRow {
            k,
            n_seeds: summaries.len(),
            loss: mean(losses.iter().map(|l| l.1)).unwrap_or(f64::NAN),
            loss_std: seed_stats(&losses, k, "best_val_loss").ok().map(|s| s.std),
            accuracy: mean(summaries.iter().filter_map(|s| s.best_val_accuracy)),
            epoch1_std: epoch1,
            seconds: mean(summaries.iter().map(|s| s.wall_clock_s)).unwrap_or(0.0),
        });
        runs.extend(summaries);
    }
    let csv_path = artifact(&a.out, "levels.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    emit(&a.out, &serde_json::json!({
        "command": "sweep",
        "regime": cfg.regime,
        "levels": rows,
        "levels_csv": csv_path,
        "runs": runs,
    }))
}
