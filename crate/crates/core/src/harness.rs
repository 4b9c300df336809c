//! Training and evaluation orchestration.
//!
//! A run trains the attention block on one subset level with one seed. The
//! seed drives the subset permutation (unless a saved plan is supplied), the
//! attention initialization and the per-epoch shuffles.

use std::collections::{BTreeSet, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{seed_stats, SeedRunStats};
use crate::corpus::{read_shard, SequenceRecord, TokenShard};
use crate::error::{Error, Result};
use crate::model::{
    batch_loss, init_attention, load_frozen, loss_and_grad, save_checkpoint, AttentionParams,
    Batch, Checkpoint, FrozenParts, FrozenSource, ModelConfig, TrainingState,
};
use crate::optim::{adamw_step, AdamWConfig, AdamWState};
use crate::rng::SplitMix64;
use crate::subsets::{make_plan, SubsetPlan};

const SHUFFLE_STREAM: u64 = 0x5348_5546; // "SHUF"

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    FixedEpochs,
    FixedSteps,
}

/// Subset level `k` (2^k sequences) or the whole training shard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Value", into = "serde_json::Value")]
pub enum SubsetSpec {
    Level(u32),
    Full,
}

impl TryFrom<serde_json::Value> for SubsetSpec {
    type Error = String;

    fn try_from(v: serde_json::Value) -> std::result::Result<Self, String> {
        match &v {
            serde_json::Value::String(s) => s.parse(),
            serde_json::Value::Number(n) => n
                .as_u64()
                .and_then(|k| u32::try_from(k).ok())
                .map(SubsetSpec::Level)
                .ok_or_else(|| format!("invalid subset level {n}")),
            _ => Err(format!("subset must be a level or \"full\", got {v}")),
        }
    }
}

impl From<SubsetSpec> for serde_json::Value {
    fn from(s: SubsetSpec) -> Self {
        match s {
            SubsetSpec::Level(k) => k.into(),
            SubsetSpec::Full => "full".into(),
        }
    }
}

impl std::str::FromStr for SubsetSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "full" {
            return Ok(Self::Full);
        }
        s.strip_prefix('k')
            .unwrap_or(s)
            .parse()
            .map(Self::Level)
            .map_err(|_| format!("subset must be a level (7 or k7) or \"full\", got {s:?}"))
    }
}

impl std::fmt::Display for SubsetSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Level(k) => write!(f, "k{k}"),
            Self::Full => f.write_str("full"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalCadence {
    pub every_epoch_until: u64,
    pub then_every: u64,
}

impl Default for EvalCadence {
    fn default() -> Self {
        Self {
            every_epoch_until: 20,
            then_every: 10,
        }
    }
}

impl EvalCadence {
    /// `{0} ∪ {1..=min(until, total)} ∪ {multiples of then_every ≤ total} ∪ {total}`.
    pub fn schedule(&self, total: u64) -> BTreeSet<u64> {
        let mut s: BTreeSet<u64> = (0..=self.every_epoch_until.min(total)).collect();
        if self.then_every > 0 {
            let mut e = (self.every_epoch_until / self.then_every + 1) * self.then_every;
            while e <= total {
                s.insert(e);
                e += self.then_every;
            }
        }
        s.insert(total);
        s
    }
}

pub fn eval_schedule(epochs_total: u64) -> BTreeSet<u64> {
    EvalCadence::default().schedule(epochs_total)
}

pub fn steps_per_epoch(subset_size: usize, batch_size: usize) -> Result<u64> {
    if batch_size == 0 || subset_size < batch_size {
        return Err(Error::Config(format!(
            "subset of {subset_size} sequences cannot fill a batch of {batch_size}"
        )));
    }
    Ok((subset_size / batch_size) as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub regime: Regime,
    /// Required by the fixed-epochs regime.
    pub epochs: Option<u64>,
    /// Required by the fixed-steps regime.
    pub total_steps: Option<u64>,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub optimizer: AdamWConfig,
    pub subset: SubsetSpec,
    pub seeds: Vec<u64>,
    pub eval_cadence: EvalCadence,
    pub model: ModelConfig,
    /// `"random"` or a tensor container path.
    pub frozen: String,
    pub frozen_seed: u64,
    pub train_shard: PathBuf,
    pub val_shard: PathBuf,
    /// Saved subset plan; without one, each run seed draws its own permutation.
    pub plan: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub save_checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            regime: Regime::FixedEpochs,
            epochs: Some(150),
            total_steps: None,
            batch_size: 16,
            eval_batch_size: 16,
            optimizer: AdamWConfig::default(),
            subset: SubsetSpec::Full,
            seeds: vec![0],
            eval_cadence: EvalCadence::default(),
            model: ModelConfig::default(),
            frozen: "random".into(),
            frozen_seed: 0,
            train_shard: PathBuf::from("train.shard"),
            val_shard: PathBuf::from("val.shard"),
            plan: None,
            out_dir: PathBuf::from("runs"),
            save_checkpoints: true,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.regime, self.epochs, self.total_steps) {
            (Regime::FixedEpochs, Some(e), None) if e >= 1 => {}
            (Regime::FixedSteps, None, Some(s)) if s >= 1 => {}
            (r, e, s) => {
                return Err(Error::Config(format!(
                    "regime {r:?} needs exactly its own budget (epochs={e:?}, total_steps={s:?})"
                )))
            }
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be ≥ 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let unique: HashSet<_> = self.seeds.iter().collect();
        if unique.len() != self.seeds.len() {
            return Err(Error::Config(format!("duplicate seeds in {:?}", self.seeds)));
        }
        self.optimizer.validate()?;
        self.model.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub seed: u64,
    pub epoch: u64,
    pub global_step: u64,
    pub tokens_processed: u64,
    /// Token-weighted mean over the epoch's updates; at epoch 0, the initial
    /// model evaluated on the training subset.
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_perplexity: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub wall_clock_s: f64,
}

impl MetricsRow {
    /// Equality ignoring wall-clock time.
    pub fn same_numbers(&self, other: &Self) -> bool {
        let strip = |r: &Self| Self {
            wall_clock_s: 0.0,
            ..r.clone()
        };
        strip(self) == strip(other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub loss: f64,
    pub perplexity: f64,
    pub accuracy: f64,
    pub valid_tokens: u64,
}

/// Token-weighted loss and accuracy over `records`. Per-batch sums are
/// computed in parallel and added in batch order.
pub fn evaluate(
    frozen: &FrozenParts,
    params: &AttentionParams,
    records: &[&SequenceRecord],
    batch_size: usize,
) -> Result<EvalResult> {
    if records.is_empty() {
        return Err(Error::EmptySelection);
    }
    if batch_size == 0 {
        return Err(Error::Config("evaluation batch size must be ≥ 1".into()));
    }
    let parts = records
        .par_chunks(batch_size)
        .map(|chunk| {
            let batch = Batch::from_records(chunk)?;
            // Batches whose every label is ignored contribute nothing.
            match batch_loss(frozen, params, &batch) {
                Err(Error::NoValidTargets) => Ok((0.0, 0, 0)),
                Ok(l) => Ok((l.loss_sum, l.valid_count as u64, l.correct as u64)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut loss_sum, mut valid, mut correct) = (0.0f64, 0u64, 0u64);
    for (l, v, c) in parts {
        loss_sum += l;
        valid += v;
        correct += c;
    }
    if valid == 0 {
        return Err(Error::NoValidTargets);
    }
    let loss = loss_sum / valid as f64;
    Ok(EvalResult {
        loss,
        perplexity: loss.exp(),
        accuracy: correct as f64 / valid as f64,
        valid_tokens: valid,
    })
}

/// In-memory inputs shared by every run of an experiment.
#[derive(Clone, Copy)]
pub struct RunInputs<'a> {
    pub frozen: &'a FrozenParts,
    pub train: &'a TokenShard,
    pub val: &'a TokenShard,
    pub plan: Option<&'a SubsetPlan>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub run_id: String,
    pub seed: u64,
    pub subset: SubsetSpec,
    pub subset_size: usize,
    pub steps: u64,
    pub metrics: Vec<MetricsRow>,
    pub best_val_loss: f64,
    pub best_epoch: u64,
    pub best_params: AttentionParams,
    pub final_params: AttentionParams,
    pub frozen_fingerprint: String,
    pub wall_clock_s: f64,
}

impl RunResult {
    pub fn epoch_row(&self, epoch: u64) -> Option<&MetricsRow> {
        self.metrics
            .iter()
            .rev()
            .find(|r| r.epoch == epoch && r.val_loss.is_some())
    }

    pub fn initial_train_loss(&self) -> Option<f64> {
        self.metrics.first().and_then(|r| r.train_loss)
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.metrics.iter().rev().find_map(|r| r.train_loss)
    }
}

pub fn run_id(subset: SubsetSpec, seed: u64) -> String {
    format!("{subset}-s{seed}")
}

fn subset_indices(cfg: &ExperimentConfig, inputs: &RunInputs, seed: u64) -> Result<Vec<usize>> {
    let n = inputs.train.len();
    match cfg.subset {
        SubsetSpec::Full => Ok((0..n).collect()),
        SubsetSpec::Level(k) => match inputs.plan {
            Some(plan) => {
                if plan.n_records() != n {
                    return Err(Error::Compatibility(format!(
                        "plan covers {} records, training shard has {n}",
                        plan.n_records()
                    )));
                }
                Ok(plan.subset_indices(k)?.to_vec())
            }
            None => Ok(make_plan(n, seed, k, k)?.subset_indices(k)?.to_vec()),
        },
    }
}

struct MetricsSink {
    writer: Option<BufWriter<File>>,
    rows: Vec<MetricsRow>,
}

impl MetricsSink {
    fn push(&mut self, row: MetricsRow) -> Result<()> {
        if let Some(w) = &mut self.writer {
            serde_json::to_writer(&mut *w, &row)?;
            w.write_all(b"\n")
                .and_then(|_| w.flush())
                .map_err(|e| Error::io("metrics.jsonl", e))?;
        }
        self.rows.push(row);
        Ok(())
    }
}

/// One training run. With `out`, writes `metrics.jsonl` and (if enabled)
/// `best.safetensors` / `final.safetensors` under `out`.
pub fn train_run(
    cfg: &ExperimentConfig,
    inputs: &RunInputs,
    seed: u64,
    out: Option<&Path>,
) -> Result<RunResult> {
    cfg.validate()?;
    let started = Instant::now();
    let id = run_id(cfg.subset, seed);
    let subset = subset_indices(cfg, inputs, seed)?;
    let spe = steps_per_epoch(subset.len(), cfg.batch_size)?;
    let (total_steps, epochs_total) = match cfg.regime {
        Regime::FixedEpochs => {
            let e = cfg.epochs.unwrap_or(1);
            (e * spe, e)
        }
        Regime::FixedSteps => {
            let s = cfg.total_steps.unwrap_or(1);
            (s, s.div_ceil(spe))
        }
    };
    let schedule = cfg.eval_cadence.schedule(epochs_total);
    let seq_len = inputs.train.seq_len() as u64;
    let frozen = inputs.frozen;
    let fingerprint = frozen.fingerprint();
    let val_records: Vec<&SequenceRecord> = inputs.val.records().iter().collect();
    let train_records = inputs.train.select(&subset)?;

    let mut sink = MetricsSink {
        writer: match out {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let p = dir.join("metrics.jsonl");
                Some(BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?))
            }
            None => None,
        },
        rows: Vec::new(),
    };
    let save = |params: &AttentionParams, opt: &AdamWState, epoch, step, val, name: &str| {
        match out {
            Some(dir) if cfg.save_checkpoints => {
                let mut state = TrainingState::new(&id, seed, fingerprint.clone());
                state.epoch = epoch;
                state.global_step = step;
                state.val_loss = val;
                let ckpt = Checkpoint {
                    params: params.clone(),
                    optimizer: opt.clone(),
                    state,
                };
                save_checkpoint(&ckpt, dir.join(name))
            }
            _ => Ok(()),
        }
    };

    let mut params = init_attention(&cfg.model, seed);
    let mut opt = AdamWState::new(cfg.model.d_model, cfg.optimizer);
    let val0 = evaluate(frozen, &params, &val_records, cfg.eval_batch_size)?;
    let train0 = evaluate(frozen, &params, &train_records, cfg.eval_batch_size)?;
    sink.push(MetricsRow {
        run_id: id.clone(),
        seed,
        epoch: 0,
        global_step: 0,
        tokens_processed: 0,
        train_loss: Some(train0.loss),
        val_loss: Some(val0.loss),
        val_perplexity: Some(val0.perplexity),
        val_accuracy: Some(val0.accuracy),
        wall_clock_s: started.elapsed().as_secs_f64(),
    })?;
    let (mut best_val, mut best_epoch, mut best_params) = (val0.loss, 0, params.clone());
    save(&params, &opt, 0, 0, Some(val0.loss), "best.safetensors")?;

    let mut step = 0u64;
    for epoch in 1..=epochs_total {
        let mut order = subset.clone();
        SplitMix64::derived(seed, SHUFFLE_STREAM.wrapping_add(epoch)).shuffle(&mut order);
        let (mut loss_sum, mut valid) = (0.0f64, 0u64);
        for chunk in order.chunks_exact(cfg.batch_size) {
            if step == total_steps {
                break;
            }
            let records = inputs.train.select(chunk)?;
            let batch = Batch::from_records(&records)?;
            let (loss, grads) = match loss_and_grad(frozen, &params, &batch) {
                Err(Error::NoValidTargets) => {
                    step += 1;
                    continue;
                }
                r => r?,
            };
            if !loss.loss_sum.is_finite() {
                return Err(Error::TrainingDiverged {
                    step: step + 1,
                    detail: format!("loss {}", loss.loss_sum),
                });
            }
            adamw_step(&mut params, &grads, &mut opt)?;
            step += 1;
            loss_sum += loss.loss_sum;
            valid += loss.valid_count as u64;
        }
        let mut row = MetricsRow {
            run_id: id.clone(),
            seed,
            epoch,
            global_step: step,
            tokens_processed: step * cfg.batch_size as u64 * seq_len,
            train_loss: (valid > 0).then(|| loss_sum / valid as f64),
            val_loss: None,
            val_perplexity: None,
            val_accuracy: None,
            wall_clock_s: 0.0,
        };
        if schedule.contains(&epoch) {
            let v = evaluate(frozen, &params, &val_records, cfg.eval_batch_size)?;
            row.val_loss = Some(v.loss);
            row.val_perplexity = Some(v.perplexity);
            row.val_accuracy = Some(v.accuracy);
            if v.loss < best_val {
                best_val = v.loss;
                best_epoch = epoch;
                best_params = params.clone();
                save(&params, &opt, epoch, step, Some(v.loss), "best.safetensors")?;
            }
        }
        row.wall_clock_s = started.elapsed().as_secs_f64();
        sink.push(row)?;
    }
    save(&params, &opt, epochs_total, step, None, "final.safetensors")?;
    Ok(RunResult {
        run_id: id,
        seed,
        subset: cfg.subset,
        subset_size: subset.len(),
        steps: step,
        metrics: sink.rows,
        best_val_loss: best_val,
        best_epoch,
        best_params,
        final_params: params,
        frozen_fingerprint: fingerprint,
        wall_clock_s: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone)]
pub struct MultiSeedResult {
    pub runs: Vec<RunResult>,
    /// Epoch-1 validation loss across seeds.
    pub epoch1: SeedRunStats,
}

/// Independent runs, one per seed, executed concurrently.
pub fn multi_seed(
    cfg: &ExperimentConfig,
    inputs: &RunInputs,
    out: Option<&Path>,
) -> Result<MultiSeedResult> {
    cfg.validate()?;
    if cfg.seeds.len() < 2 {
        return Err(Error::Config("multi-seed mode needs at least 2 seeds".into()));
    }
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let dir = out.map(|o| o.join(run_id(cfg.subset, seed)));
            train_run(cfg, inputs, seed, dir.as_deref())
        })
        .collect::<Result<Vec<_>>>()?;
    let values = runs
        .iter()
        .map(|r| {
            r.epoch_row(1)
                .and_then(|row| row.val_loss)
                .map(|v| (r.seed, v))
                .ok_or_else(|| Error::InsufficientData(format!("{} has no epoch-1 evaluation", r.run_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = match cfg.subset {
        SubsetSpec::Level(k) => k,
        SubsetSpec::Full => inputs.train.len().ilog2(),
    };
    let epoch1 = seed_stats(&values, k, "val_loss@epoch1")?;
    Ok(MultiSeedResult { runs, epoch1 })
}

/// Shards, frozen parts and optional plan resolved from config paths.
pub struct LoadedInputs {
    pub frozen: FrozenParts,
    pub train: TokenShard,
    pub val: TokenShard,
    pub plan: Option<SubsetPlan>,
}

impl LoadedInputs {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let source: FrozenSource = cfg.frozen.parse().unwrap_or(FrozenSource::Random);
        let frozen = load_frozen(&source, &cfg.model, cfg.frozen_seed)?;
        let train = read_shard(&cfg.train_shard)?;
        let val = read_shard(&cfg.val_shard)?;
        for shard in [&train, &val] {
            if shard.seq_len() > cfg.model.seq_len {
                return Err(Error::Config(format!(
                    "shard sequence length {} exceeds model seq_len {}",
                    shard.seq_len(),
                    cfg.model.seq_len
                )));
            }
        }
        let plan = cfg.plan.as_ref().map(SubsetPlan::load).transpose()?;
        Ok(Self {
            frozen,
            train,
            val,
            plan,
        })
    }

    pub fn inputs(&self) -> RunInputs<'_> {
        RunInputs {
            frozen: &self.frozen,
            train: &self.train,
            val: &self.val,
            plan: self.plan.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub seed: u64,
    pub subset: SubsetSpec,
    pub subset_size: usize,
    pub steps: u64,
    pub tokens_processed: u64,
    pub best_val_loss: f64,
    pub best_epoch: u64,
    pub final_train_loss: Option<f64>,
    pub best_val_accuracy: Option<f64>,
    pub wall_clock_s: f64,
}

impl From<&RunResult> for RunSummary {
    fn from(r: &RunResult) -> Self {
        let best_row = r.epoch_row(r.best_epoch);
        Self {
            run_id: r.run_id.clone(),
            seed: r.seed,
            subset: r.subset,
            subset_size: r.subset_size,
            steps: r.steps,
            tokens_processed: r.metrics.last().map_or(0, |m| m.tokens_processed),
            best_val_loss: r.best_val_loss,
            best_epoch: r.best_epoch,
            final_train_loss: r.final_train_loss(),
            best_val_accuracy: best_row.and_then(|m| m.val_accuracy),
            wall_clock_s: r.wall_clock_s,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub runs: Vec<RunSummary>,
    pub epoch1: Option<SeedRunStats>,
}

/// Loads inputs from the config paths and runs every seed, writing one
/// directory per run under `out_dir` plus `summary.json`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let loaded = LoadedInputs::load(cfg)?;
    let inputs = loaded.inputs();
    let out = cfg.out_dir.as_path();
    let (runs, epoch1) = if cfg.seeds.len() >= 2 {
        let m = multi_seed(cfg, &inputs, Some(out))?;
        (m.runs, Some(m.epoch1))
    } else {
        let seed = cfg.seeds[0];
        let dir = out.join(run_id(cfg.subset, seed));
        (vec![train_run(cfg, &inputs, seed, Some(&dir))?], None)
    };
    let summary = ExperimentSummary {
        runs: runs.iter().map(RunSummary::from).collect(),
        epoch1,
    };
    let p = out.join("summary.json");
    fs::write(&p, serde_json::to_vec_pretty(&summary)?).map_err(|e| Error::io(&p, e))?;
    Ok(summary)
}
