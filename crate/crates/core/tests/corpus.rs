mod common;

use attnlab::corpus::{
    chunk_corpus, ingest_articles, mal_sweep, split_train_val, synth_corpus, tokenize_articles,
    ChunkMode, CorpusStats, ShardProvenance, SynthSpec,
};
use proptest::prelude::*;

fn histogram(spec: &SynthSpec) -> Vec<u64> {
    let mut counts = vec![0u64; spec.vocab_size - 1];
    for a in synth_corpus(spec).unwrap() {
        for t in a {
            counts[t as usize] += 1;
        }
    }
    counts
}

#[test]
fn zipf_zero_is_uniform() {
    let spec = SynthSpec {
        vocab_size: 1000,
        n_articles: 2000,
        min_len: 400,
        max_len: 600,
        zipf_exponent: 0.0,
        seed: 11,
        ..Default::default()
    };
    let counts = histogram(&spec);
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let df = (counts.len() - 1) as f64;
    assert!((chi2 - df).abs() <= 3.0 * (2.0 * df).sqrt(), "chi2 {chi2} for df {df}");
}

#[test]
fn zipf_ranks_follow_the_target() {
    let spec = SynthSpec {
        vocab_size: 1000,
        n_articles: 5000,
        min_len: 200,
        max_len: 200,
        zipf_exponent: 1.1,
        seed: 12,
        ..Default::default()
    };
    let counts = histogram(&spec);
    assert_eq!(counts.iter().sum::<u64>(), 1_000_000);
    // The target is strictly decreasing in id, so a pair (i < j) is
    // concordant when the empirical count also decreases.
    let n = counts.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            match counts[i].cmp(&counts[j]) {
                std::cmp::Ordering::Greater => concordant += 1,
                std::cmp::Ordering::Less => discordant += 1,
                std::cmp::Ordering::Equal => {}
            }
        }
    }
    let tau = (concordant - discordant) as f64 / (n * (n - 1) / 2) as f64;
    assert!(tau >= 0.9, "kendall tau {tau}");
}

#[test]
fn padding_ratio_matches_recount_and_falls_with_mal() {
    let spec = SynthSpec {
        vocab_size: 300,
        n_articles: 3000,
        min_len: 8,
        max_len: 400,
        seed: 5,
        ..Default::default()
    };
    let articles = synth_corpus(&spec).unwrap();
    let records = chunk_corpus(&articles, 64, spec.eos_id(), ChunkMode::MultiWindow).unwrap();
    let stats = CorpusStats::from_records(&records);
    let padding: usize = records
        .iter()
        .map(|r| r.tokens().iter().skip(r.valid_len()).count())
        .sum();
    assert_eq!(stats.padding_tokens, padding as u64);
    assert_eq!(stats.total_tokens, records.len() as u64 * 64);
    assert_eq!(stats.padding_ratio, padding as f64 / (records.len() * 64) as f64);

    let sweep = mal_sweep(&articles, &[0, 64, 128, 256], 64, spec.eos_id(), ChunkMode::MultiWindow).unwrap();
    for w in sweep.windows(2) {
        assert!(w[1].stats.padding_ratio <= w[0].stats.padding_ratio);
        assert!(w[1].n_articles <= w[0].n_articles);
    }
}

#[test]
fn pipeline_is_deterministic_from_file_to_split() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("articles.jsonl");
    let lines: Vec<String> = (0..60)
        .map(|i| {
            let text = format!("Article {i} says the   value is {} and the weather is mild.", i * 37 % 11);
            serde_json::json!({ "text": text }).to_string()
        })
        .chain(std::iter::once(r#"{"text": "Article 0 says the value is 0 and the weather is mild."}"#.into()))
        .collect();
    std::fs::write(&path, lines.join("\n")).unwrap();
    let vocab = common::fixture_vocab();
    let run = || {
        let ingested = ingest_articles(&path, "text").unwrap();
        assert_eq!(ingested.duplicates, 1);
        let ids = tokenize_articles(&vocab, &ingested.articles);
        let records = chunk_corpus(&ids, 8, vocab.eos_id(), ChunkMode::MultiWindow).unwrap();
        split_train_val(records, 10, 3, ShardProvenance::new("file", vocab.eos_id())).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.1.len(), 10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chunks_preserve_content_and_pad_with_eos(
        lens in prop::collection::vec(1usize..200, 1..20),
        seq in 1usize..64,
        truncate in any::<bool>(),
    ) {
        let eos = 999u32;
        let articles: Vec<Vec<u32>> = lens
            .iter()
            .enumerate()
            .map(|(i, &n)| (0..n).map(|j| ((i * 31 + j * 7) % 998) as u32).collect())
            .collect();
        let mode = if truncate { ChunkMode::Truncate } else { ChunkMode::MultiWindow };
        let records = chunk_corpus(&articles, seq, eos, mode).unwrap();
        for r in &records {
            prop_assert!(r.valid_len() >= 1);
            prop_assert!(r.tokens()[r.valid_len()..].iter().all(|&t| t == eos));
        }
        let content: Vec<u32> = records.iter().flat_map(|r| r.tokens()[..r.valid_len()].to_vec()).collect();
        let expected: Vec<u32> = match mode {
            ChunkMode::MultiWindow => articles.concat(),
            ChunkMode::Truncate => articles.iter().flat_map(|a| a[..a.len().min(seq)].to_vec()).collect(),
        };
        prop_assert_eq!(content, expected);
    }

    #[test]
    fn split_is_a_disjoint_partition(n in 2usize..300, seed in any::<u64>()) {
        let records = common::random_records(seed, n, 4, 50);
        let n_val = 1 + (seed as usize % (n - 1));
        let (train, val) = split_train_val(records.clone(), n_val, seed, ShardProvenance::new("p", 49)).unwrap();
        prop_assert_eq!(train.len() + val.len(), n);
        prop_assert_eq!(val.len(), n_val);
        let mut all: Vec<Vec<u32>> = train.records().iter().chain(val.records()).map(|r| r.tokens().to_vec()).collect();
        let mut orig: Vec<Vec<u32>> = records.iter().map(|r| r.tokens().to_vec()).collect();
        all.sort();
        orig.sort();
        prop_assert_eq!(all, orig);
    }
}
