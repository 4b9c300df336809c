//! Attention parameters and AdamW moments in one tensor container, with the
//! training state in a JSON sidecar next to it (`<name>.json`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AttentionParams, TensorFile};
use crate::error::{Error, Result};
use crate::optim::{AdamWConfig, AdamWState};
use crate::rng::RNG_NAME;

const FORMAT: &str = "attnlab-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub run_id: String,
    pub seed: u64,
    pub epoch: u64,
    pub global_step: u64,
    pub val_loss: Option<f64>,
    pub frozen_fingerprint: String,
    pub rng: String,
    pub optimizer: AdamWConfig,
    pub optimizer_step: u64,
}

impl TrainingState {
    pub fn new(run_id: impl Into<String>, seed: u64, frozen_fingerprint: String) -> Self {
        Self {
            run_id: run_id.into(),
            seed,
            epoch: 0,
            global_step: 0,
            val_loss: None,
            frozen_fingerprint,
            rng: RNG_NAME.into(),
            optimizer: AdamWConfig::default(),
            optimizer_step: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: AttentionParams,
    pub optimizer: AdamWState,
    pub state: TrainingState,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = TensorFile::default();
    let groups = [
        ("attn", &ckpt.params),
        ("adamw.m", &ckpt.optimizer.m),
        ("adamw.v", &ckpt.optimizer.v),
    ];
    for (prefix, p) in groups {
        for (name, values) in p.tensors() {
            file.insert(format!("{prefix}.{name}"), p.shape_of(name), values.to_vec());
        }
    }
    file.metadata.insert("format".into(), FORMAT.into());
    file.metadata
        .insert("d_model".into(), ckpt.params.d_model().to_string());
    file.write(path)?;
    let mut state = ckpt.state.clone();
    state.optimizer = ckpt.optimizer.config;
    state.optimizer_step = ckpt.optimizer.step;
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_vec_pretty(&state)?).map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = TensorFile::read(path)?;
    if file.metadata.get("format").map(String::as_str) != Some(FORMAT) {
        return Err(Error::Compatibility(format!(
            "{} is not a {FORMAT} container",
            path.display()
        )));
    }
    let d: usize = file
        .metadata
        .get("d_model")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Compatibility("checkpoint lacks d_model".into()))?;
    let group = |prefix: &str| {
        AttentionParams::from_tensors(d, |name| {
            let shape = if AttentionParams::<f32>::is_weight(name) {
                vec![d, d]
            } else {
                vec![d]
            };
            Ok(file.require(&format!("{prefix}.{name}"), &shape)?.data.clone())
        })
    };
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let state: TrainingState = serde_json::from_str(&text)?;
    Ok(Checkpoint {
        params: group("attn")?,
        optimizer: AdamWState {
            step: state.optimizer_step,
            m: group("adamw.m")?,
            v: group("adamw.v")?,
            config: state.optimizer,
        },
        state,
    })
}
