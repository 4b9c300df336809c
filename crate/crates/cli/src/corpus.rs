use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use attnlab::corpus::{
    chunk_corpus, filter_mal, ingest_articles, mal_sweep, split_train_val, synth_corpus,
    tokenize_articles, write_shard, ChunkMode, CorpusStats, ShardProvenance, SweepPoint, SynthSpec,
};
use attnlab::corpus::read_shard;
use attnlab::subsets::make_plan;
use attnlab::tokenizer::load_bpe;
use attnlab::{BpeVocab, TokenId, TokenShard};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::{artifact, create_out, emit, write_json};

#[derive(Clone, Copy, ValueEnum)]
pub enum Chunking {
    MultiWindow,
    Truncate,
}

impl From<Chunking> for ChunkMode {
    fn from(c: Chunking) -> Self {
        match c {
            Chunking::MultiWindow => ChunkMode::MultiWindow,
            Chunking::Truncate => ChunkMode::Truncate,
        }
    }
}

#[derive(Args)]
pub struct SplitArgs {
    #[arg(long, default_value_t = 1024)]
    seq_len: usize,
    /// Validation records taken from the end of the shuffled order.
    #[arg(long, default_value_t = 256)]
    n_val: usize,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, value_enum, default_value_t = Chunking::MultiWindow)]
    chunking: Chunking,
}

#[derive(Serialize)]
struct ShardSummary {
    train: String,
    val: String,
    train_records: usize,
    val_records: usize,
    seq_len: usize,
    stats: CorpusStats,
}

fn split_and_write(
    articles: &[Vec<TokenId>],
    eos: TokenId,
    split: &SplitArgs,
    provenance: ShardProvenance,
    out: &std::path::Path,
) -> Result<ShardSummary> {
    let records = chunk_corpus(articles, split.seq_len, eos, split.chunking.into())?;
    let stats = CorpusStats::from_records(&records);
    let (train, val) = split_train_val(records, split.n_val, split.split_seed, provenance)?;
    let (tp, vp) = (artifact(out, "train.shard"), artifact(out, "val.shard"));
    write_shard(&train, &tp)?;
    write_shard(&val, &vp)?;
    Ok(ShardSummary {
        train: tp.display().to_string(),
        val: vp.display().to_string(),
        train_records: train.len(),
        val_records: val.len(),
        seq_len: split.seq_len,
        stats,
    })
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    vocab_size: usize,
    #[arg(long, default_value_t = 8192)]
    n_articles: usize,
    #[arg(long, default_value_t = 16)]
    min_len: usize,
    #[arg(long, default_value_t = 256)]
    max_len: usize,
    #[arg(long, default_value_t = 1.1)]
    zipf: f64,
    /// Probability that a token copies one from the preceding window.
    #[arg(long, default_value_t = 0.0)]
    repeat_prob: f64,
    #[arg(long, default_value_t = 16)]
    repeat_window: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    split: SplitArgs,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    create_out(&a.out)?;
    let spec = SynthSpec {
        vocab_size: a.vocab_size,
        n_articles: a.n_articles,
        min_len: a.min_len,
        max_len: a.max_len,
        zipf_exponent: a.zipf,
        repeat_prob: a.repeat_prob,
        repeat_window: a.repeat_window,
        seed: a.seed,
    };
    let articles = synth_corpus(&spec)?;
    write_json(&artifact(&a.out, "synth_spec.json"), &spec)?;
    let mut prov = ShardProvenance::new("synthetic-zipf", spec.eos_id());
    prov.note = Some(serde_json::to_string(&spec)?);
    let summary = split_and_write(&articles, spec.eos_id(), &a.split, prov, &a.out)?;
    emit(&a.out, &serde_json::json!({
        "command": "synth-corpus",
        "articles": articles.len(),
        "vocab_size": spec.vocab_size,
        "eos_id": spec.eos_id(),
        "shards": summary,
    }))
}

#[derive(Args)]
pub struct IngestArgs {
    /// CSV/TSV with a header row, or JSONL.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "text")]
    text_field: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct ArticleLine {
    text: String,
}

pub fn ingest(a: IngestArgs) -> Result<()> {
    create_out(&a.out)?;
    let ing = ingest_articles(&a.input, &a.text_field)?;
    let path = artifact(&a.out, "articles.jsonl");
    let mut w = BufWriter::new(std::fs::File::create(&path)?);
    for text in &ing.articles {
        serde_json::to_writer(&mut w, &ArticleLine { text: text.clone() })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    emit(&a.out, &serde_json::json!({
        "command": "ingest",
        "articles": ing.articles.len(),
        "duplicates": ing.duplicates,
        "skipped": ing.skipped,
        "output": path,
    }))
}

#[derive(Args)]
pub struct VocabArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    merges: PathBuf,
    /// Accept vocabularies other than the 50,257-entry GPT-2 one.
    #[arg(long)]
    any_size: bool,
}

impl VocabArgs {
    fn load(&self) -> Result<BpeVocab> {
        Ok(if self.any_size {
            BpeVocab::from_files(&self.vocab, &self.merges, None)?
        } else {
            load_bpe(&self.vocab, &self.merges)?
        })
    }
}

#[derive(Args)]
pub struct TokenizeArgs {
    /// `articles.jsonl` from `ingest`.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    vocab: VocabArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct TokenLine {
    ids: Vec<TokenId>,
}

#[derive(Serialize, Deserialize)]
struct TokenHeader {
    vocab_size: usize,
    eos_id: TokenId,
    tokenizer_fingerprint: String,
}

pub fn tokenize(a: TokenizeArgs) -> Result<()> {
    create_out(&a.out)?;
    let vocab = a.vocab.load()?;
    let file = std::fs::File::open(&a.input)
        .with_context(|| format!("opening {}", a.input.display()))?;
    let articles: Vec<String> = BufReader::new(file)
        .lines()
        .map(|l| Ok(serde_json::from_str::<ArticleLine>(&l?)?.text))
        .collect::<Result<_>>()?;
    let ids = tokenize_articles(&vocab, &articles);
    let path = artifact(&a.out, "tokens.jsonl");
    let mut w = BufWriter::new(std::fs::File::create(&path)?);
    for list in &ids {
        serde_json::to_writer(&mut w, &TokenLine { ids: list.clone() })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let header = TokenHeader {
        vocab_size: vocab.len(),
        eos_id: vocab.eos_id(),
        tokenizer_fingerprint: vocab.fingerprint().to_string(),
    };
    write_json(&artifact(&a.out, "tokens.meta.json"), &header)?;
    let total: usize = ids.iter().map(Vec::len).sum();
    emit(&a.out, &serde_json::json!({
        "command": "tokenize",
        "articles": ids.len(),
        "tokens": total,
        "vocab_size": header.vocab_size,
        "eos_id": header.eos_id,
        "tokenizer_fingerprint": header.tokenizer_fingerprint,
        "output": path,
    }))
}

#[derive(Args)]
pub struct ShardArgs {
    /// `tokens.jsonl` from `tokenize`; `tokens.meta.json` is read beside it.
    #[arg(long)]
    tokens: PathBuf,
    /// Minimum article length in tokens.
    #[arg(long, default_value_t = 500)]
    mal: usize,
    /// Also report padding ratios at these MAL thresholds.
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<usize>,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    out: PathBuf,
}

pub fn shard(a: ShardArgs) -> Result<()> {
    create_out(&a.out)?;
    let meta_path = a.tokens.with_file_name("tokens.meta.json");
    let meta: TokenHeader = serde_json::from_str(
        &std::fs::read_to_string(&meta_path)
            .with_context(|| format!("reading {}", meta_path.display()))?,
    )?;
    let file = std::fs::File::open(&a.tokens)
        .with_context(|| format!("opening {}", a.tokens.display()))?;
    let lists: Vec<Vec<TokenId>> = BufReader::new(file)
        .lines()
        .map(|l| Ok(serde_json::from_str::<TokenLine>(&l?)?.ids))
        .collect::<Result<_>>()?;
    let sweep: Vec<SweepPoint> = if a.sweep.is_empty() {
        Vec::new()
    } else {
        mal_sweep(&lists, &a.sweep, a.split.seq_len, meta.eos_id, a.split.chunking.into())?
    };
    let kept = filter_mal(&lists, a.mal.max(1));
    if kept.is_empty() {
        bail!("no article has at least {} tokens", a.mal);
    }
    let mut prov = ShardProvenance::new(a.tokens.display().to_string(), meta.eos_id);
    prov.min_article_len = Some(a.mal);
    prov.tokenizer_fingerprint = Some(meta.tokenizer_fingerprint);
    let summary = split_and_write(&kept, meta.eos_id, &a.split, prov, &a.out)?;
    if !sweep.is_empty() {
        write_json(&artifact(&a.out, "mal_sweep.json"), &sweep)?;
    }
    emit(&a.out, &serde_json::json!({
        "command": "shard",
        "articles_in": lists.len(),
        "articles_kept": kept.len(),
        "mal": a.mal,
        "shards": summary,
        "mal_sweep": sweep,
    }))
}

#[derive(Args)]
pub struct PlanArgs {
    #[arg(long)]
    shard: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 7)]
    k_min: u32,
    /// Defaults to the largest level the shard can fill.
    #[arg(long)]
    k_max: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

pub fn plan(a: PlanArgs) -> Result<()> {
    create_out(&a.out)?;
    let shard: TokenShard = read_shard(&a.shard)?;
    let k_max = a.k_max.unwrap_or_else(|| shard.len().ilog2());
    let plan = make_plan(shard.len(), a.seed, a.k_min, k_max)?;
    let path = artifact(&a.out, "plan.json");
    plan.save(&path)?;
    emit(&a.out, &serde_json::json!({
        "command": "subset-plan",
        "plan": path,
        "seed": a.seed,
        "n_records": plan.n_records(),
        "levels": plan.levels(),
    }))
}
