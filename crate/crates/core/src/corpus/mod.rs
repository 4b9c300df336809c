//! Articles to fixed-length, EOS-padded token windows.
//!
//! Pipeline: [`ingest_articles`] (clean + exact dedup) → tokenize →
//! [`filter_mal`] → [`chunk_and_pad`] → [`split_train_val`] → shard files.

mod ingest;
mod shard;
mod synth;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SplitMix64, RNG_NAME};
use crate::tokenizer::{BpeVocab, TokenId};

pub use ingest::{clean_text, ingest_articles, Ingested};
pub use shard::{read_shard, write_shard, SHARD_MAGIC, SHARD_VERSION};
pub use synth::{synth_corpus, zipf_probabilities, SynthSpec};

pub const DEFAULT_SEQ_LEN: usize = 1024;

const SPLIT_STREAM: u64 = 0x5350_4c49_54; // "SPLIT"

/// One fixed-length window: `tokens[..valid_len]` is content, the rest is EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceRecord {
    tokens: Vec<TokenId>,
    valid_len: usize,
}

impl SequenceRecord {
    pub fn new(tokens: Vec<TokenId>, valid_len: usize, eos_id: TokenId) -> Result<Self> {
        if valid_len == 0 || valid_len > tokens.len() {
            return Err(Error::Size(format!(
                "valid_len {valid_len} outside [1, {}]",
                tokens.len()
            )));
        }
        if let Some(pos) = tokens[valid_len..].iter().position(|&t| t != eos_id) {
            return Err(Error::Contract(format!(
                "padding position {} holds token {} instead of EOS",
                valid_len + pos,
                tokens[valid_len + pos]
            )));
        }
        Ok(Self { tokens, valid_len })
    }

    /// Pads `content` with EOS up to `seq_len`.
    pub fn padded(content: &[TokenId], seq_len: usize, eos_id: TokenId) -> Result<Self> {
        if content.len() > seq_len {
            return Err(Error::Size(format!(
                "{} tokens do not fit in {seq_len}",
                content.len()
            )));
        }
        let mut tokens = content.to_vec();
        tokens.resize(seq_len, eos_id);
        Self::new(tokens, content.len(), eos_id)
    }

    #[inline]
    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    #[inline]
    pub fn valid_len(&self) -> usize {
        self.valid_len
    }

    #[inline]
    pub fn seq_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn padding(&self) -> usize {
        self.tokens.len() - self.valid_len
    }

    /// Overwrites a token in place. Used by masking tests to perturb padded
    /// positions; the EOS-padding invariant is not re-checked.
    pub fn set_token_unchecked(&mut self, pos: usize, token: TokenId) {
        self.tokens[pos] = token;
    }
}

/// Free-form provenance stored as JSON in the shard header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardProvenance {
    pub source: String,
    pub eos_id: TokenId,
    #[serde(default)]
    pub min_article_len: Option<usize>,
    #[serde(default)]
    pub tokenizer_fingerprint: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub rng: Option<String>,
    #[serde(default)]
    pub note: Option<String>,
}

impl ShardProvenance {
    pub fn new(source: impl Into<String>, eos_id: TokenId) -> Self {
        Self {
            source: source.into(),
            eos_id,
            min_article_len: None,
            tokenizer_fingerprint: None,
            seed: None,
            rng: None,
            note: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenShard {
    seq_len: usize,
    records: Vec<SequenceRecord>,
    pub provenance: ShardProvenance,
}

impl TokenShard {
    pub fn new(records: Vec<SequenceRecord>, provenance: ShardProvenance) -> Result<Self> {
        let seq_len = records
            .first()
            .ok_or_else(|| Error::Size("a shard needs at least one record".into()))?
            .seq_len();
        if let Some(bad) = records.iter().position(|r| r.seq_len() != seq_len) {
            return Err(Error::Size(format!(
                "record {bad} has length {}, shard uses {seq_len}",
                records[bad].seq_len()
            )));
        }
        Ok(Self {
            seq_len,
            records,
            provenance,
        })
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn records(&self) -> &[SequenceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn eos_id(&self) -> TokenId {
        self.provenance.eos_id
    }

    pub fn stats(&self) -> CorpusStats {
        CorpusStats::from_records(&self.records)
    }

    /// Records selected by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Vec<&SequenceRecord>> {
        indices
            .iter()
            .map(|&i| {
                self.records.get(i).ok_or(Error::OutOfRange {
                    what: "record index",
                    value: i,
                    limit: self.records.len(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_sequences: usize,
    pub total_tokens: u64,
    pub padding_tokens: u64,
    pub padding_ratio: f64,
}

impl CorpusStats {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a SequenceRecord>) -> Self {
        let (mut n, mut total, mut padding) = (0usize, 0u64, 0u64);
        for r in records {
            n += 1;
            total += r.seq_len() as u64;
            padding += r.padding() as u64;
        }
        Self {
            n_sequences: n,
            total_tokens: total,
            padding_tokens: padding,
            padding_ratio: if total == 0 {
                0.0
            } else {
                padding as f64 / total as f64
            },
        }
    }
}

/// How an article longer than one window is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChunkMode {
    /// Every window is kept; the remainder window is padded.
    #[default]
    MultiWindow,
    /// Only the first window is kept.
    Truncate,
}

/// Tokenizes articles in parallel, preserving input order.
pub fn tokenize_articles(vocab: &BpeVocab, articles: &[String]) -> Vec<Vec<TokenId>> {
    articles.par_iter().map(|a| vocab.encode(a)).collect()
}

/// Keeps the token lists with at least `min_tokens` tokens.
pub fn filter_mal(token_lists: &[Vec<TokenId>], min_tokens: usize) -> Vec<Vec<TokenId>> {
    token_lists
        .iter()
        .filter(|t| t.len() >= min_tokens)
        .cloned()
        .collect()
}

pub fn chunk_and_pad(
    article: &[TokenId],
    seq_len: usize,
    eos_id: TokenId,
    mode: ChunkMode,
) -> Result<Vec<SequenceRecord>> {
    if article.is_empty() {
        return Err(Error::Size("cannot chunk an empty article".into()));
    }
    if seq_len == 0 {
        return Err(Error::Config("seq_len must be positive".into()));
    }
    let windows = article.chunks(seq_len);
    let take = match mode {
        ChunkMode::MultiWindow => usize::MAX,
        ChunkMode::Truncate => 1,
    };
    windows
        .take(take)
        .map(|w| SequenceRecord::padded(w, seq_len, eos_id))
        .collect()
}

/// Chunks every article in order.
pub fn chunk_corpus(
    articles: &[Vec<TokenId>],
    seq_len: usize,
    eos_id: TokenId,
    mode: ChunkMode,
) -> Result<Vec<SequenceRecord>> {
    let per_article: Vec<Vec<SequenceRecord>> = articles
        .par_iter()
        .map(|a| chunk_and_pad(a, seq_len, eos_id, mode))
        .collect::<Result<_>>()?;
    Ok(per_article.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: usize,
    pub n_articles: usize,
    pub stats: CorpusStats,
}

/// Padding ratio after MAL filtering and chunking, per threshold.
pub fn mal_sweep(
    articles: &[Vec<TokenId>],
    thresholds: &[usize],
    seq_len: usize,
    eos_id: TokenId,
    mode: ChunkMode,
) -> Result<Vec<SweepPoint>> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("MAL thresholds must be ascending".into()));
    }
    thresholds
        .iter()
        .map(|&threshold| {
            let kept: Vec<Vec<TokenId>> = articles
                .iter()
                .filter(|a| a.len() >= threshold && !a.is_empty())
                .cloned()
                .collect();
            let records = chunk_corpus(&kept, seq_len, eos_id, mode)?;
            Ok(SweepPoint {
                threshold,
                n_articles: kept.len(),
                stats: CorpusStats::from_records(&records),
            })
        })
        .collect()
}

/// Seeded shuffle; the last `n_val` records become the validation shard.
pub fn split_train_val(
    records: Vec<SequenceRecord>,
    n_val: usize,
    seed: u64,
    provenance: ShardProvenance,
) -> Result<(TokenShard, TokenShard)> {
    if n_val >= records.len() {
        return Err(Error::Size(format!(
            "n_val {n_val} leaves no training records out of {}",
            records.len()
        )));
    }
    if n_val == 0 {
        return Err(Error::Size("validation split must be non-empty".into()));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    SplitMix64::derived(seed, SPLIT_STREAM).shuffle(&mut order);
    let mut slots: Vec<Option<SequenceRecord>> = records.into_iter().map(Some).collect();
    let mut take = |ids: &[usize]| -> Vec<SequenceRecord> {
        ids.iter().map(|&i| slots[i].take().unwrap()).collect()
    };
    let n_train = order.len() - n_val;
    let train = take(&order[..n_train]);
    let val = take(&order[n_train..]);

    let mut prov = provenance;
    prov.seed = Some(seed);
    prov.rng = Some(RNG_NAME.to_string());
    let mut train_prov = prov.clone();
    train_prov.note = Some(format!("train split ({n_train} of {})", order.len()));
    let mut val_prov = prov;
    val_prov.note = Some(format!("validation split ({n_val} of {})", order.len()));
    Ok((
        TokenShard::new(train, train_prov)?,
        TokenShard::new(val, val_prov)?,
    ))
}
