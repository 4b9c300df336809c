use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use attnlab::{ExperimentConfig, Regime, SubsetSpec};
use clap::{Args, ValueEnum};
use serde_json::Value;

#[derive(Clone, Copy, ValueEnum)]
pub enum RegimeArg {
    FixedEpochs,
    FixedSteps,
}

/// Config file plus per-field overrides. `--set path=value` reaches any
/// field, e.g. `--set model.d_model=64` or `--set optimizer.beta2=0.95`.
#[derive(Args, Default)]
pub struct ConfigArgs {
    /// JSON experiment config; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub regime: Option<RegimeArg>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub total_steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub eval_batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// `k7`, `7` or `full`.
    #[arg(long)]
    pub subset: Option<SubsetSpec>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub embedding_std: Option<f64>,
    #[arg(long)]
    pub init_std: Option<f64>,
    /// `random` or a tensor container with `wte` / `wpe`.
    #[arg(long)]
    pub frozen: Option<String>,
    #[arg(long)]
    pub frozen_seed: Option<u64>,
    #[arg(long)]
    pub train_shard: Option<PathBuf>,
    #[arg(long)]
    pub val_shard: Option<PathBuf>,
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub no_checkpoints: bool,
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub set: Vec<String>,
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .with_context(|| format!("{path}: {} is not an object", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            if !obj.contains_key(*part) {
                bail!("unknown config field {path}");
            }
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .get_mut(*part)
            .with_context(|| format!("unknown config field {path}"))?;
    }
    unreachable!("split yields at least one part")
}

impl ConfigArgs {
    pub fn resolve(&self, out: Option<&PathBuf>) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(r) = self.regime {
            cfg.regime = match r {
                RegimeArg::FixedEpochs => Regime::FixedEpochs,
                RegimeArg::FixedSteps => Regime::FixedSteps,
            };
            match cfg.regime {
                Regime::FixedEpochs => cfg.total_steps = None,
                Regime::FixedSteps => cfg.epochs = None,
            }
        }
        if self.epochs.is_some() {
            cfg.epochs = self.epochs;
        }
        if self.total_steps.is_some() {
            cfg.total_steps = self.total_steps;
        }
        macro_rules! take {
            ($($field:ident => $($target:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { cfg.$($target).+ = v; })*
            };
        }
        take!(
            batch_size => batch_size,
            eval_batch_size => eval_batch_size,
            lr => optimizer.lr,
            weight_decay => optimizer.weight_decay,
            subset => subset,
            seeds => seeds,
            d_model => model.d_model,
            seq_len => model.seq_len,
            vocab_size => model.vocab_size,
            embedding_std => model.embedding_std,
            init_std => model.init_std,
            frozen => frozen,
            frozen_seed => frozen_seed,
            train_shard => train_shard,
            val_shard => val_shard,
        );
        if self.plan.is_some() {
            cfg.plan = self.plan.clone();
        }
        if self.no_checkpoints {
            cfg.save_checkpoints = false;
        }
        if let Some(out) = out {
            cfg.out_dir = out.clone();
        }
        if !self.set.is_empty() {
            let mut tree = serde_json::to_value(&cfg)?;
            for item in &self.set {
                let (path, raw) = item
                    .split_once('=')
                    .with_context(|| format!("--set expects PATH=VALUE, got {item}"))?;
                let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
                set_path(&mut tree, path, value)?;
            }
            cfg = serde_json::from_value(tree)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
