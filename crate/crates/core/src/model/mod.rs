//! Single-block, single-head, attention-only decoder.
//!
//! ```text
//! h0     = wte[tokens] + wpe[positions]
//! x      = LN1(h0)
//! q,k,v  = x·Wq + bq, x·Wk + bk, x·Wv + bv
//! o      = softmax_mask(q·kᵀ / √d) · v
//! a      = h0 + o·Wo
//! logits = LNf(a) · wteᵀ
//! ```
//!
//! Row vectors multiply weights from the left. `wte`, `wpe` and both layer
//! norms are frozen; the output projection is `wte` itself. Gradients are
//! produced for the seven attention tensors only.

mod checkpoint;
mod container;

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::SequenceRecord;
use crate::error::{Error, Result};
use crate::numerics::{
    cross_entropy_masked, layer_norm, masked_softmax, matmul, matmul_nt, matmul_tn, LayerNormTape,
    Mask, Matrix, Scalar, SoftmaxTape, LAYER_NORM_EPS,
};
use crate::rng::SplitMix64;
use crate::tokenizer::{TokenId, GPT2_VOCAB_SIZE};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingState};
pub use container::{StoredTensor, TensorFile};

const FROZEN_STREAM: u64 = 0x4652_4f5a_454e; // "FROZEN"
const INIT_STREAM: u64 = 0x494e_4954; // "INIT"

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub seq_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub vocab_size: usize,
    pub mlp_removed: bool,
    pub freeze_embeddings: bool,
    pub freeze_output: bool,
    /// Std of `wte`/`wpe` when frozen parts are drawn at random.
    pub embedding_std: f64,
    /// Std of the attention weight matrices at initialization.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seq_len: 1024,
            d_model: 768,
            n_heads: 1,
            n_layers: 1,
            vocab_size: GPT2_VOCAB_SIZE,
            mlp_removed: true,
            freeze_embeddings: true,
            freeze_output: true,
            embedding_std: 0.02,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    /// Small configuration for tests and desk-scale runs.
    pub fn tiny(d_model: usize, vocab_size: usize, seq_len: usize) -> Self {
        Self {
            seq_len,
            d_model,
            vocab_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seq_len == 0 || self.d_model == 0 || self.vocab_size < 2 {
            return bad(format!(
                "seq_len {}, d_model {}, vocab {} must be positive (vocab ≥ 2)",
                self.seq_len, self.d_model, self.vocab_size
            ));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_heads != 1 || self.n_layers != 1 {
            return bad("only the single-layer, single-head block is implemented".into());
        }
        if !(self.mlp_removed && self.freeze_embeddings && self.freeze_output) {
            return bad("MLP sublayers and trainable embeddings are not supported".into());
        }
        if !(self.embedding_std > 0.0 && self.init_std >= 0.0) {
            return bad("standard deviations must be positive".into());
        }
        Ok(())
    }

    pub fn eos_id(&self) -> TokenId {
        (self.vocab_size - 1) as TokenId
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamConvention {
    /// Input embedding and tied output counted separately, `wpe` and LN excluded.
    PaperTable,
    /// Each stored tensor counted once: `wte`, `wpe`, both LNs, attention.
    StrictTied,
}

impl FromStr for ParamConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-table" => Ok(Self::PaperTable),
            "strict-tied" => Ok(Self::StrictTied),
            other => Err(Error::Config(format!(
                "unknown parameter convention {other:?} (paper-table | strict-tied)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: u64,
    pub trainable: u64,
}

pub fn param_count(config: &ModelConfig, convention: ParamConvention) -> ParamCount {
    let (v, d, s) = (
        config.vocab_size as u64,
        config.d_model as u64,
        config.seq_len as u64,
    );
    let trainable = config.n_layers as u64 * (4 * d * d + 3 * d);
    let total = match convention {
        ParamConvention::PaperTable => 2 * v * d + trainable,
        ParamConvention::StrictTied => v * d + s * d + 4 * d + trainable,
    };
    ParamCount { total, trainable }
}

/// Where frozen tensors come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrozenSource {
    Random,
    Container(std::path::PathBuf),
}

impl FromStr for FrozenSource {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(if s == "random" {
            Self::Random
        } else {
            Self::Container(s.into())
        })
    }
}

/// Embeddings and normalization parameters that never receive gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenParts<T: Scalar = f32> {
    wte: Matrix<T>,
    wpe: Matrix<T>,
    ln1_gain: Vec<T>,
    ln1_bias: Vec<T>,
    lnf_gain: Vec<T>,
    lnf_bias: Vec<T>,
    eos_id: TokenId,
}

impl<T: Scalar> FrozenParts<T> {
    /// Layer norms at identity.
    pub fn new(wte: Matrix<T>, wpe: Matrix<T>) -> Result<Self> {
        let d = wte.cols();
        let one = vec![T::one(); d];
        let zero = vec![T::zero(); d];
        Self::with_norms(wte, wpe, [one.clone(), zero.clone(), one, zero])
    }

    /// `norms` is `[ln1_gain, ln1_bias, lnf_gain, lnf_bias]`.
    pub fn with_norms(wte: Matrix<T>, wpe: Matrix<T>, norms: [Vec<T>; 4]) -> Result<Self> {
        let d = wte.cols();
        if wte.rows() < 2 || d == 0 || wpe.cols() != d || wpe.rows() == 0 {
            return Err(Error::shape(
                "FrozenParts",
                format!("wte {:?}, wpe {:?}", wte.shape(), wpe.shape()),
            ));
        }
        if norms.iter().any(|n| n.len() != d) {
            return Err(Error::shape("FrozenParts", "layer norm vectors must have length d"));
        }
        let [ln1_gain, ln1_bias, lnf_gain, lnf_bias] = norms;
        let eos_id = (wte.rows() - 1) as TokenId;
        Ok(Self {
            wte,
            wpe,
            ln1_gain,
            ln1_bias,
            lnf_gain,
            lnf_bias,
            eos_id,
        })
    }

    pub fn wte(&self) -> &Matrix<T> {
        &self.wte
    }

    pub fn wpe(&self) -> &Matrix<T> {
        &self.wpe
    }

    pub fn ln1(&self) -> (&[T], &[T]) {
        (&self.ln1_gain, &self.ln1_bias)
    }

    pub fn lnf(&self) -> (&[T], &[T]) {
        (&self.lnf_gain, &self.lnf_bias)
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn vocab_size(&self) -> usize {
        self.wte.rows()
    }

    pub fn d_model(&self) -> usize {
        self.wte.cols()
    }

    pub fn max_seq_len(&self) -> usize {
        self.wpe.rows()
    }

    pub fn cast<U: Scalar>(&self) -> FrozenParts<U> {
        let c = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect();
        FrozenParts {
            wte: self.wte.cast(),
            wpe: self.wpe.cast(),
            ln1_gain: c(&self.ln1_gain),
            ln1_bias: c(&self.ln1_bias),
            lnf_gain: c(&self.lnf_gain),
            lnf_bias: c(&self.lnf_bias),
            eos_id: self.eos_id,
        }
    }

    fn named(&self) -> [(&'static str, &[T]); 6] {
        [
            ("wte", self.wte.data()),
            ("wpe", self.wpe.data()),
            ("ln1.gain", &self.ln1_gain),
            ("ln1.bias", &self.ln1_bias),
            ("lnf.gain", &self.lnf_gain),
            ("lnf.bias", &self.lnf_bias),
        ]
    }

    /// SHA-256 over every frozen value (as f64 bits), in a fixed tensor order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, values) in self.named() {
            h.update(name.as_bytes());
            for v in values {
                h.update(v.as_f64().to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let d = self.d_model();
        let mut file = TensorFile::default();
        for (name, values) in self.named() {
            let shape = match name {
                "wte" => vec![self.vocab_size(), d],
                "wpe" => vec![self.max_seq_len(), d],
                _ => vec![d],
            };
            let data = values.iter().map(|v| v.as_f64() as f32).collect();
            file.insert(name, shape, data);
        }
        file.write(path)
    }
}

pub fn load_frozen(source: &FrozenSource, config: &ModelConfig, seed: u64) -> Result<FrozenParts> {
    config.validate()?;
    let (v, s, d) = (config.vocab_size, config.seq_len, config.d_model);
    match source {
        FrozenSource::Random => {
            let mut rng = SplitMix64::derived(seed, FROZEN_STREAM);
            let std = config.embedding_std;
            let wte = Matrix::from_fn(v, d, |_, _| (rng.normal() * std) as f32);
            let wpe = Matrix::from_fn(s, d, |_, _| (rng.normal() * std) as f32);
            FrozenParts::new(wte, wpe)
        }
        FrozenSource::Container(path) => {
            let file = TensorFile::read(path)?;
            let wte = file.require("wte", &[v, d])?;
            let wpe = file.require("wpe", &[s, d])?;
            let norm = |name: &str, default: f32| -> Result<Vec<f32>> {
                match file.get(name) {
                    None => Ok(vec![default; d]),
                    Some(_) => Ok(file.require(name, &[d])?.data.clone()),
                }
            };
            FrozenParts::with_norms(
                Matrix::from_vec(v, d, wte.data.clone())?,
                Matrix::from_vec(s, d, wpe.data.clone())?,
                [
                    norm("ln1.gain", 1.0)?,
                    norm("ln1.bias", 0.0)?,
                    norm("lnf.gain", 1.0)?,
                    norm("lnf.bias", 0.0)?,
                ],
            )
        }
    }
}

/// The seven trainable tensors. Also used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T: Scalar = f32> {
    pub wq: Matrix<T>,
    pub wk: Matrix<T>,
    pub wv: Matrix<T>,
    pub wo: Matrix<T>,
    pub bq: Vec<T>,
    pub bk: Vec<T>,
    pub bv: Vec<T>,
}

/// Tensor names in storage order.
pub const PARAM_NAMES: [&str; 7] = ["wq", "wk", "wv", "wo", "bq", "bk", "bv"];

impl<T: Scalar> AttentionParams<T> {
    pub fn zeros(d: usize) -> Self {
        Self {
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            wo: Matrix::zeros(d, d),
            bq: vec![T::zero(); d],
            bk: vec![T::zero(); d],
            bv: vec![T::zero(); d],
        }
    }

    pub fn d_model(&self) -> usize {
        self.wq.rows()
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `(name, values)` in [`PARAM_NAMES`] order.
    pub fn tensors(&self) -> [(&'static str, &[T]); 7] {
        [
            ("wq", self.wq.data()),
            ("wk", self.wk.data()),
            ("wv", self.wv.data()),
            ("wo", self.wo.data()),
            ("bq", &self.bq),
            ("bk", &self.bk),
            ("bv", &self.bv),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [T]); 7] {
        [
            ("wq", self.wq.data_mut()),
            ("wk", self.wk.data_mut()),
            ("wv", self.wv.data_mut()),
            ("wo", self.wo.data_mut()),
            ("bq", &mut self.bq),
            ("bk", &mut self.bk),
            ("bv", &mut self.bv),
        ]
    }

    pub fn is_weight(name: &str) -> bool {
        name.starts_with('w')
    }

    pub fn shape_of(&self, name: &str) -> Vec<usize> {
        let d = self.d_model();
        if Self::is_weight(name) {
            vec![d, d]
        } else {
            vec![d]
        }
    }

    pub fn cast<U: Scalar>(&self) -> AttentionParams<U> {
        let c = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect();
        AttentionParams {
            wq: self.wq.cast(),
            wk: self.wk.cast(),
            wv: self.wv.cast(),
            wo: self.wo.cast(),
            bq: c(&self.bq),
            bk: c(&self.bk),
            bv: c(&self.bv),
        }
    }

    /// Rebuilds from flat tensors in [`PARAM_NAMES`] order.
    pub fn from_tensors(d: usize, mut get: impl FnMut(&str) -> Result<Vec<T>>) -> Result<Self> {
        let mut p = Self::zeros(d);
        for (name, slot) in p.tensors_mut() {
            let values = get(name)?;
            if values.len() != slot.len() {
                return Err(Error::Compatibility(format!(
                    "tensor {name}: expected {} values, found {}",
                    slot.len(),
                    values.len()
                )));
            }
            slot.copy_from_slice(&values);
        }
        Ok(p)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Weights `~ N(0, init_std²)` in `wq, wk, wv, wo` order; biases zero.
pub fn init_attention(config: &ModelConfig, seed: u64) -> AttentionParams {
    let d = config.d_model;
    let mut rng = SplitMix64::derived(seed, INIT_STREAM);
    let mut p = AttentionParams::zeros(d);
    for (name, values) in p.tensors_mut() {
        if AttentionParams::<f32>::is_weight(name) {
            for v in values {
                *v = (rng.normal() * config.init_std) as f32;
            }
        }
    }
    p
}

/// Token ids of `batch_size` sequences of equal length, flattened row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    tokens: Vec<TokenId>,
    valid_lens: Vec<usize>,
    seq_len: usize,
}

impl Batch {
    pub fn from_records(records: &[&SequenceRecord]) -> Result<Self> {
        let seq_len = records.first().ok_or(Error::EmptySelection)?.seq_len();
        let mut tokens = Vec::with_capacity(records.len() * seq_len);
        let mut valid_lens = Vec::with_capacity(records.len());
        for r in records {
            if r.seq_len() != seq_len {
                return Err(Error::shape(
                    "Batch",
                    format!("sequence lengths {} and {seq_len}", r.seq_len()),
                ));
            }
            tokens.extend_from_slice(r.tokens());
            valid_lens.push(r.valid_len());
        }
        Ok(Self {
            tokens,
            valid_lens,
            seq_len,
        })
    }

    pub fn len(&self) -> usize {
        self.valid_lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid_lens.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn sequence(&self, b: usize) -> &[TokenId] {
        &self.tokens[b * self.seq_len..(b + 1) * self.seq_len]
    }

    pub fn valid_lens(&self) -> &[usize] {
        &self.valid_lens
    }
}

/// Per-sequence attention masks and the flattened next-token labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMasks {
    pub masks: Vec<Mask>,
    /// `None` is the ignore label.
    pub labels: Vec<Option<TokenId>>,
}

impl BatchMasks {
    pub fn valid_targets(&self) -> usize {
        self.labels.iter().flatten().count()
    }
}

pub fn build_masks(batch: &Batch) -> BatchMasks {
    let s = batch.seq_len();
    let mut labels = Vec::with_capacity(batch.tokens.len());
    let masks = (0..batch.len())
        .map(|b| {
            let (seq, valid) = (batch.sequence(b), batch.valid_lens[b]);
            labels.extend((0..s).map(|t| (t + 1 < valid).then(|| seq[t + 1])));
            Mask::causal_padded(s, valid)
        })
        .collect();
    BatchMasks { masks, labels }
}

struct CacheInner<T: Scalar> {
    batch_size: usize,
    seq_len: usize,
    x1: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    o: Matrix<T>,
    softmax: Vec<SoftmaxTape<T>>,
    lnf: LayerNormTape<T>,
}

/// Activations saved by [`forward`]; [`backward`] consumes them once.
pub struct ForwardCache<T: Scalar = f32> {
    inner: Option<CacheInner<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Attention probabilities of sequence `b` (`seq × seq`), while unconsumed.
    pub fn attention_probs(&self, b: usize) -> Option<&Matrix<T>> {
        self.inner.as_ref()?.softmax.get(b).map(|t| t.probs())
    }

    pub fn is_consumed(&self) -> bool {
        self.inner.is_none()
    }
}

fn block<T: Scalar>(m: &Matrix<T>, start: usize, rows: usize) -> Matrix<T> {
    let c = m.cols();
    Matrix::from_vec(rows, c, m.data()[start * c..(start + rows) * c].to_vec())
        .expect("block within bounds")
}

fn affine<T: Scalar>(x: &Matrix<T>, w: &Matrix<T>, b: &[T]) -> Result<Matrix<T>> {
    let mut y = matmul(x, w)?;
    y.add_row_vector(b)?;
    Ok(y)
}

fn stack<T: Scalar>(blocks: Vec<Matrix<T>>, cols: usize) -> Matrix<T> {
    let rows = blocks.iter().map(|b| b.rows()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for b in blocks {
        data.extend(b.into_vec());
    }
    Matrix::from_vec(rows, cols, data).expect("stacked blocks share width")
}

/// Logits for every position, `(batch·seq) × vocab`.
pub fn forward<T: Scalar>(
    frozen: &FrozenParts<T>,
    params: &AttentionParams<T>,
    batch: &Batch,
    masks: &BatchMasks,
) -> Result<(Matrix<T>, ForwardCache<T>)> {
    let (bsz, s, d) = (batch.len(), batch.seq_len(), frozen.d_model());
    if params.d_model() != d {
        return Err(Error::shape(
            "forward",
            format!("params d={} vs frozen d={d}", params.d_model()),
        ));
    }
    if s > frozen.max_seq_len() {
        return Err(Error::shape(
            "forward",
            format!("sequence length {s} exceeds {} positions", frozen.max_seq_len()),
        ));
    }
    if masks.masks.len() != bsz || masks.labels.len() != bsz * s {
        return Err(Error::shape("forward", "masks do not match the batch"));
    }
    let vocab = frozen.vocab_size();
    let mut h0 = Matrix::zeros(bsz * s, d);
    for (r, &t) in batch.tokens().iter().enumerate() {
        let e = frozen.wte.data().get(t as usize * d..(t as usize + 1) * d).ok_or(
            Error::OutOfRange {
                what: "token id",
                value: t as usize,
                limit: vocab,
            },
        )?;
        let p = frozen.wpe.row(r % s);
        for ((o, &a), &b) in h0.row_mut(r).iter_mut().zip(e).zip(p) {
            *o = a + b;
        }
    }
    let (x1, _) = layer_norm(&h0, &frozen.ln1_gain, &frozen.ln1_bias, LAYER_NORM_EPS)?;
    let q = affine(&x1, &params.wq, &params.bq)?;
    let k = affine(&x1, &params.wk, &params.bk)?;
    let v = affine(&x1, &params.wv, &params.bv)?;
    let scale = T::from_f64(1.0 / (d as f64).sqrt());
    let heads = (0..bsz)
        .into_par_iter()
        .map(|b| {
            let (qb, kb, vb) = (block(&q, b * s, s), block(&k, b * s, s), block(&v, b * s, s));
            let mut scores = matmul_nt(&qb, &kb)?;
            scores.scale(scale);
            let (p, tape) = masked_softmax(&scores, &masks.masks[b])?;
            Ok((matmul(&p, &vb)?, tape))
        })
        .collect::<Result<Vec<_>>>()?;
    let (outs, softmax): (Vec<_>, Vec<_>) = heads.into_iter().unzip();
    let o = stack(outs, d);
    let a = h0.add(&matmul(&o, &params.wo)?)?;
    let (f, lnf) = layer_norm(&a, &frozen.lnf_gain, &frozen.lnf_bias, LAYER_NORM_EPS)?;
    let logits = matmul_nt(&f, &frozen.wte)?;
    let cache = ForwardCache {
        inner: Some(CacheInner {
            batch_size: bsz,
            seq_len: s,
            x1,
            q,
            k,
            v,
            o,
            softmax,
            lnf,
        }),
    };
    Ok((logits, cache))
}

/// Gradients of a scalar loss with respect to the attention tensors, given
/// the loss gradient with respect to the logits.
pub fn backward<T: Scalar>(
    frozen: &FrozenParts<T>,
    params: &AttentionParams<T>,
    cache: &mut ForwardCache<T>,
    dlogits: &Matrix<T>,
) -> Result<AttentionParams<T>> {
    let c = cache
        .inner
        .take()
        .ok_or_else(|| Error::Contract("forward cache already consumed by backward".into()))?;
    let (bsz, s, d) = (c.batch_size, c.seq_len, frozen.d_model());
    if dlogits.shape() != (bsz * s, frozen.vocab_size()) {
        return Err(Error::shape(
            "backward",
            format!("dlogits {:?}", dlogits.shape()),
        ));
    }
    let df = matmul(dlogits, &frozen.wte)?;
    let da = c.lnf.backward(&df)?;
    let dwo = matmul_tn(&c.o, &da)?;
    let d_o = matmul_nt(&da, &params.wo)?;
    let scale = T::from_f64(1.0 / (d as f64).sqrt());
    let (q, k, v) = (&c.q, &c.k, &c.v);
    let heads = c
        .softmax
        .into_par_iter()
        .enumerate()
        .map(|(b, tape)| {
            let (qb, kb, vb, dob) = (
                block(q, b * s, s),
                block(k, b * s, s),
                block(v, b * s, s),
                block(&d_o, b * s, s),
            );
            let dp = matmul_nt(&dob, &vb)?;
            let dvb = matmul_tn(tape.probs(), &dob)?;
            let mut ds = tape.backward(&dp)?;
            ds.scale(scale);
            Ok((matmul(&ds, &kb)?, matmul_tn(&ds, &qb)?, dvb))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut dqs, mut dks, mut dvs) = (vec![], vec![], vec![]);
    for (dq, dk, dv) in heads {
        dqs.push(dq);
        dks.push(dk);
        dvs.push(dv);
    }
    let (dq, dk, dv) = (stack(dqs, d), stack(dks, d), stack(dvs, d));
    Ok(AttentionParams {
        wq: matmul_tn(&c.x1, &dq)?,
        wk: matmul_tn(&c.x1, &dk)?,
        wv: matmul_tn(&c.x1, &dv)?,
        wo: dwo,
        bq: dq.column_sums(),
        bk: dk.column_sums(),
        bv: dv.column_sums(),
    })
}

/// Token-summed loss statistics of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub loss_sum: f64,
    pub valid_count: usize,
    pub correct: usize,
}

impl BatchLoss {
    pub fn mean(&self) -> f64 {
        self.loss_sum / self.valid_count as f64
    }
}

/// Loss statistics without gradient work.
pub fn batch_loss<T: Scalar>(
    frozen: &FrozenParts<T>,
    params: &AttentionParams<T>,
    batch: &Batch,
) -> Result<BatchLoss> {
    let masks = build_masks(batch);
    let (logits, _) = forward(frozen, params, batch, &masks)?;
    let ce = cross_entropy_masked(&logits, &masks.labels)?;
    Ok(BatchLoss {
        loss_sum: ce.loss_sum,
        valid_count: ce.valid_count,
        correct: ce.correct,
    })
}

/// Mean token loss of the batch and its gradient.
pub fn loss_and_grad<T: Scalar>(
    frozen: &FrozenParts<T>,
    params: &AttentionParams<T>,
    batch: &Batch,
) -> Result<(BatchLoss, AttentionParams<T>)> {
    let masks = build_masks(batch);
    let (logits, mut cache) = forward(frozen, params, batch, &masks)?;
    let ce = cross_entropy_masked(&logits, &masks.labels)?;
    let mut dlogits = ce.dlogits;
    dlogits.scale(T::from_f64(1.0 / ce.valid_count as f64));
    let grads = backward(frozen, params, &mut cache, &dlogits)?;
    Ok((
        BatchLoss {
            loss_sum: ce.loss_sum,
            valid_count: ce.valid_count,
            correct: ce.correct,
        },
        grads,
    ))
}
