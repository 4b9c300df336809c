use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tokenizer::TokenId;

/// Parameters of the synthetic Zipf corpus. Token `vocab_size − 1` is the
/// EOS/padding id and never appears inside an article; the remaining ids
/// are drawn with `p(id) ∝ (id + 1)^(−zipf_exponent)`.
///
/// With `repeat_prob > 0`, each token after the first is, with that
/// probability, a copy of a uniformly chosen token among the previous
/// `repeat_window` positions of the same article instead of a fresh draw.
/// Copies preserve the Zipf marginal while giving attention something
/// beyond unigram statistics to learn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub vocab_size: usize,
    pub n_articles: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub zipf_exponent: f64,
    pub repeat_prob: f64,
    pub repeat_window: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            vocab_size: 1000,
            n_articles: 1 << 13,
            min_len: 16,
            max_len: 256,
            zipf_exponent: 1.1,
            repeat_prob: 0.0,
            repeat_window: 16,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn eos_id(&self) -> TokenId {
        (self.vocab_size - 1) as TokenId
    }
}

/// Normalized Zipf weights over `n` ranks.
pub fn zipf_probabilities(n: usize, exponent: f64) -> Vec<f64> {
    let weights: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-exponent)).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

pub fn synth_corpus(spec: &SynthSpec) -> Result<Vec<Vec<TokenId>>> {
    if spec.vocab_size < 2 {
        return Err(Error::Config("synthetic vocab_size must be ≥ 2".into()));
    }
    if spec.min_len < 1 || spec.min_len > spec.max_len {
        return Err(Error::Config(format!(
            "article length range [{}, {}] is invalid",
            spec.min_len, spec.max_len
        )));
    }
    if !(spec.zipf_exponent >= 0.0 && spec.zipf_exponent.is_finite()) {
        return Err(Error::Config("zipf_exponent must be finite and ≥ 0".into()));
    }
    if !(0.0..=1.0).contains(&spec.repeat_prob) || spec.repeat_window == 0 {
        return Err(Error::Config(
            "repeat_prob must lie in [0, 1] and repeat_window be ≥ 1".into(),
        ));
    }
    let body_vocab = spec.vocab_size - 1;
    let mut cdf = zipf_probabilities(body_vocab, spec.zipf_exponent);
    let mut acc = 0.0;
    for p in &mut cdf {
        acc += *p;
        *p = acc;
    }
    let mut rng = SplitMix64::new(spec.seed);
    let span = (spec.max_len - spec.min_len + 1) as u64;
    let articles = (0..spec.n_articles)
        .map(|_| {
            let len = spec.min_len + rng.below(span) as usize;
            let mut article: Vec<TokenId> = Vec::with_capacity(len);
            for i in 0..len {
                if i > 0 && spec.repeat_prob > 0.0 && rng.next_f64() < spec.repeat_prob {
                    let w = spec.repeat_window.min(i);
                    let j = i - 1 - rng.below(w as u64) as usize;
                    article.push(article[j]);
                    continue;
                }
                let u = rng.next_f64();
                let idx = cdf.partition_point(|&c| c <= u);
                article.push(idx.min(body_vocab - 1) as TokenId);
            }
            article
        })
        .collect();
    Ok(articles)
}
