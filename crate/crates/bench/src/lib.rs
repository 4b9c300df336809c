//! Benchmark inputs shared by the criterion targets.

use attnlab::model::{init_attention, load_frozen, Batch, FrozenSource};
use attnlab::rng::SplitMix64;
use attnlab::{AttentionParams, FrozenParts, Matrix, ModelConfig, SequenceRecord};

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = SplitMix64::new(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.normal() as f32)
}

pub struct ModelInputs {
    pub frozen: FrozenParts,
    pub params: AttentionParams,
    pub records: Vec<SequenceRecord>,
}

impl ModelInputs {
    pub fn new(d: usize, vocab: usize, seq: usize, batch: usize) -> Self {
        let cfg = ModelConfig::tiny(d, vocab, seq);
        let mut rng = SplitMix64::new(1);
        let eos = (vocab - 1) as u32;
        let records = (0..batch)
            .map(|_| {
                let len = 1 + rng.below(seq as u64) as usize;
                let content: Vec<u32> = (0..len).map(|_| rng.below(eos as u64) as u32).collect();
                SequenceRecord::padded(&content, seq, eos).expect("valid record")
            })
            .collect();
        Self {
            frozen: load_frozen(&FrozenSource::Random, &cfg, 0).expect("valid config"),
            params: init_attention(&cfg, 0),
            records,
        }
    }

    pub fn batch(&self) -> Batch {
        let refs: Vec<&SequenceRecord> = self.records.iter().collect();
        Batch::from_records(&refs).expect("uniform records")
    }
}

/// Deterministic mixed-script text of roughly `words` words.
pub fn sample_text(words: usize) -> String {
    const WORDS: &[&str] = &[
        "the", "model", "attention", "subset", " scaling", "tokens", "don't", "2024", "naïve",
        "数据", "loss,", "perplexity.", "\n", "GPT-2", "emoji🙂",
    ];
    let mut rng = SplitMix64::new(7);
    (0..words)
        .map(|_| WORDS[rng.below(WORDS.len() as u64) as usize])
        .collect::<Vec<_>>()
        .join(" ")
}
