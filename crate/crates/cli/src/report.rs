use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use attnlab::analysis::{subset_report, write_subset_csv, write_token_report};
use attnlab::corpus::read_shard;
use attnlab::model::{param_count, ModelConfig, ParamConvention};
use attnlab::scaling::{
    predicted_vs_empirical, regime_diagnosis, tokens_per_param, tradeoff_table,
    write_prediction_csv, write_tradeoff_csv, DEFAULT_SCALING_N,
};
use attnlab::{ScalingConstants, SubsetPlan};
use clap::Args;
use serde::Deserialize;

use crate::{artifact, create_out, emit, write_json};

#[derive(Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    shard: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    /// Defaults to the shard's eos id + 1.
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long, default_value_t = 10)]
    top_n: usize,
    /// Count padding positions as tokens.
    #[arg(long)]
    include_padding: bool,
    #[arg(long)]
    out: PathBuf,
}

pub fn analyze(a: AnalyzeArgs) -> Result<()> {
    create_out(&a.out)?;
    let shard = read_shard(&a.shard)?;
    let plan = SubsetPlan::load(&a.plan)?;
    let vocab = a.vocab_size.unwrap_or(shard.eos_id() as usize + 1);
    let (rows, tokens) = subset_report(&plan, &shard, vocab, a.top_n, !a.include_padding)?;
    let csv = artifact(&a.out, "subsets.csv");
    let json = artifact(&a.out, "token_errors.json");
    write_subset_csv(&rows, &csv)?;
    write_token_report(&tokens, &json)?;
    emit(&a.out, &serde_json::json!({
        "command": "analyze",
        "vocab_size": vocab,
        "excludes_padding": !a.include_padding,
        "levels": rows,
        "subsets_csv": csv,
        "token_report": json,
    }))
}

#[derive(Deserialize)]
struct LevelLine {
    k: u32,
    loss: Option<f64>,
    accuracy: Option<f64>,
    seconds: Option<f64>,
}

/// Reads a CSV with a `k` column and any of `loss`, `accuracy`, `seconds`
/// (the `levels.csv` written by `sweep` has all of them).
fn read_levels(path: &Path) -> Result<Vec<LevelLine>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize()
        .map(|row| Ok(row.with_context(|| format!("parsing {}", path.display()))?))
        .collect()
}

#[derive(Args)]
pub struct PredictArgs {
    /// Non-embedding parameter count.
    #[arg(long, default_value_t = DEFAULT_SCALING_N)]
    n: f64,
    #[arg(long, value_delimiter = ',', default_value = "7,8,9,10,11,12,13,14,15,16,17")]
    levels: Vec<u32>,
    /// Tokens per training sequence (D = 2^k × this).
    #[arg(long, default_value_t = 1024)]
    tokens_per_sequence: u64,
    /// Measured losses per level (CSV with `k` and `loss` columns).
    #[arg(long)]
    empirical: Option<PathBuf>,
    /// Also diagnose the regime at this dataset size; defaults to the largest level.
    #[arg(long)]
    d: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

pub fn predict(a: PredictArgs) -> Result<()> {
    create_out(&a.out)?;
    let c = ScalingConstants::default();
    let tokens: Vec<f64> = a
        .levels
        .iter()
        .map(|&k| (1u64 << k) as f64 * a.tokens_per_sequence as f64)
        .collect();
    let empirical: Vec<(u32, f64)> = match &a.empirical {
        Some(p) => read_levels(p)?
            .into_iter()
            .filter(|l| a.levels.contains(&l.k))
            .map(|l| (l.k, l.loss.unwrap_or(f64::NAN)))
            .collect(),
        None => a.levels.iter().map(|&k| (k, f64::NAN)).collect(),
    };
    let rows = predicted_vs_empirical(&a.levels, &tokens, a.n, &c, &empirical)?;
    let csv = artifact(&a.out, "predictions.csv");
    write_prediction_csv(&rows, &csv)?;
    let d = a.d.or(tokens.last().copied()).context("no levels given")?;
    let diagnosis = regime_diagnosis(a.n, d, &c)?;
    write_json(&artifact(&a.out, "diagnosis.json"), &diagnosis)?;
    let trainable = param_count(&ModelConfig::default(), ParamConvention::PaperTable).trainable;
    let ratios: Vec<f64> = tokens
        .iter()
        .map(|&t| tokens_per_param(t, trainable as f64))
        .collect::<attnlab::Result<_>>()?;
    emit(&a.out, &serde_json::json!({
        "command": "scaling-predict",
        "constants": c,
        "n": a.n,
        "predictions": rows,
        "tokens_per_param": ratios,
        "token_count": "raw positions (2^k x tokens_per_sequence, padding included)",
        "diagnosis": diagnosis,
        "predictions_csv": csv,
    }))
}

#[derive(Args)]
pub struct TradeoffArgs {
    /// CSV with `k` and `accuracy` columns, optionally `seconds`.
    #[arg(long)]
    levels: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.9,0.95,1.0")]
    fractions: Vec<f64>,
    /// Use the steps proxy even when wall-clock seconds are present.
    #[arg(long)]
    steps_proxy: bool,
    #[arg(long)]
    out: PathBuf,
}

pub fn tradeoff(a: TradeoffArgs) -> Result<()> {
    create_out(&a.out)?;
    let lines = read_levels(&a.levels)?;
    let acc: Vec<(u32, f64)> = lines
        .iter()
        .map(|l| {
            l.accuracy
                .map(|v| (l.k, v))
                .with_context(|| format!("level {} has no accuracy", l.k))
        })
        .collect::<Result<_>>()?;
    let secs: Option<Vec<(u32, f64)>> = lines
        .iter()
        .map(|l| l.seconds.map(|s| (l.k, s)))
        .collect::<Option<_>>()
        .filter(|_| !a.steps_proxy);
    let report = tradeoff_table(&acc, secs.as_deref(), &a.fractions)?;
    let csv = artifact(&a.out, "tradeoff.csv");
    write_tradeoff_csv(&report, &csv)?;
    emit(&a.out, &serde_json::json!({
        "command": "tradeoff-report",
        "report": report,
        "tradeoff_csv": csv,
    }))
}
