//! Subset representativeness: token distributions, KL / Jensen-Shannon
//! divergence against the full shard, per-token relative errors and
//! multi-seed summary statistics.

use std::f64::consts::LN_2;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{SequenceRecord, TokenShard};
use crate::error::{Error, Result};
use crate::subsets::SubsetPlan;
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    counts: Vec<u64>,
    probs: Vec<f64>,
    total: u64,
    excludes_padding: bool,
}

impl TokenDistribution {
    pub fn from_counts(counts: Vec<u64>, excludes_padding: bool) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptySelection);
        }
        let probs = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Ok(Self {
            counts,
            probs,
            total,
            excludes_padding,
        })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn vocab_size(&self) -> usize {
        self.counts.len()
    }

    pub fn excludes_padding(&self) -> bool {
        self.excludes_padding
    }
}

/// Counts token ids over the given records. With `exclude_padding`, only
/// positions below each record's `valid_len` are counted.
pub fn token_distribution<'a>(
    records: &[&'a SequenceRecord],
    vocab_size: usize,
    exclude_padding: bool,
) -> Result<TokenDistribution> {
    if records.is_empty() {
        return Err(Error::EmptySelection);
    }
    let counts = records
        .par_iter()
        .try_fold(
            || vec![0u64; vocab_size],
            |mut acc, r| {
                let end = if exclude_padding {
                    r.valid_len()
                } else {
                    r.seq_len()
                };
                for &t in &r.tokens()[..end] {
                    let slot = acc.get_mut(t as usize).ok_or(Error::OutOfRange {
                        what: "token id",
                        value: t as usize,
                        limit: vocab_size,
                    })?;
                    *slot += 1;
                }
                Ok::<_, Error>(acc)
            },
        )
        .try_reduce(
            || vec![0u64; vocab_size],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    TokenDistribution::from_counts(counts, exclude_padding)
}

/// Distribution of the whole shard.
pub fn shard_distribution(
    shard: &TokenShard,
    vocab_size: usize,
    exclude_padding: bool,
) -> Result<TokenDistribution> {
    let all: Vec<&SequenceRecord> = shard.records().iter().collect();
    token_distribution(&all, vocab_size, exclude_padding)
}

fn same_support(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::shape(
            "divergence",
            format!("vocabularies of {} and {} entries", p.len(), q.len()),
        ));
    }
    Ok(())
}

/// `Σ_{p_i > 0} p_i ln(p_i / q_i)` in nats.
pub fn kl_divergence_probs(p: &[f64], q: &[f64]) -> Result<f64> {
    same_support(p, q)?;
    let mut sum = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::InfiniteDivergence(i));
            }
            sum += pi * (pi / qi).ln();
        }
    }
    Ok(sum)
}

pub fn kl_divergence(p: &TokenDistribution, q: &TokenDistribution) -> Result<f64> {
    kl_divergence_probs(p.probs(), q.probs())
}

/// Jensen-Shannon divergence in nats, in `[0, ln 2]`. Each index contributes
/// `½ p ln(p/m) + ½ q ln(q/m)`; the terms commute, so the result is exactly
/// symmetric in its arguments.
pub fn js_divergence_probs(p: &[f64], q: &[f64]) -> Result<f64> {
    same_support(p, q)?;
    let term = |a: f64, m: f64| if a > 0.0 { a * (a / m).ln() } else { 0.0 };
    let mut sum = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let m = 0.5 * (pi + qi);
        if m > 0.0 {
            sum += 0.5 * term(pi, m) + 0.5 * term(qi, m);
        }
    }
    Ok(sum.clamp(0.0, LN_2))
}

pub fn js_divergence(p: &TokenDistribution, q: &TokenDistribution) -> Result<f64> {
    js_divergence_probs(p.probs(), q.probs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JsPoint {
    pub k: u32,
    pub n_sequences: usize,
    pub js: f64,
    /// Forward difference to the next level per unit of log₂N; absent at the last level.
    pub d_js: Option<f64>,
}

/// JS divergence of every plan level against `reference`.
pub fn js_curve(
    plan: &SubsetPlan,
    shard: &TokenShard,
    reference: &TokenDistribution,
) -> Result<Vec<JsPoint>> {
    let levels = plan.levels();
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("plan levels must be strictly ascending".into()));
    }
    let mut points = Vec::with_capacity(levels.len());
    for &k in levels {
        let dist = level_distribution(plan, shard, k, reference)?;
        points.push(JsPoint {
            k,
            n_sequences: 1 << k,
            js: js_divergence(&dist, reference)?,
            d_js: None,
        });
    }
    for i in 0..points.len().saturating_sub(1) {
        let dk = (points[i + 1].k - points[i].k) as f64;
        points[i].d_js = Some((points[i + 1].js - points[i].js) / dk);
    }
    Ok(points)
}

/// Distribution of one subset level, counted the same way as `reference`.
pub fn level_distribution(
    plan: &SubsetPlan,
    shard: &TokenShard,
    k: u32,
    reference: &TokenDistribution,
) -> Result<TokenDistribution> {
    let records = shard.select(plan.subset_indices(k)?)?;
    token_distribution(
        &records,
        reference.vocab_size(),
        reference.excludes_padding(),
    )
}

#[derive(Debug, Clone)]
pub enum TokenSelector {
    Ids(Vec<TokenId>),
    /// The `n` most probable tokens of the reference; ties go to the lower id.
    TopN(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenError {
    pub token: TokenId,
    pub p_subset: f64,
    pub p_ref: f64,
    /// `100 · |p_subset − p_ref| / p_ref`.
    pub percent_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeErrorReport {
    pub tokens: Vec<TokenError>,
    pub mean: f64,
}

pub fn top_tokens(p_ref: &[f64], n: usize) -> Vec<TokenId> {
    let mut ids: Vec<TokenId> = (0..p_ref.len() as TokenId).collect();
    ids.sort_by(|&a, &b| {
        p_ref[b as usize]
            .total_cmp(&p_ref[a as usize])
            .then(a.cmp(&b))
    });
    ids.truncate(n);
    ids
}

pub fn per_token_relative_error(
    p_sub: &[f64],
    p_ref: &[f64],
    selector: &TokenSelector,
) -> Result<RelativeErrorReport> {
    same_support(p_sub, p_ref)?;
    let ids = match selector {
        TokenSelector::Ids(ids) => ids.clone(),
        TokenSelector::TopN(n) => top_tokens(p_ref, *n),
    };
    if ids.is_empty() {
        return Err(Error::EmptySelection);
    }
    let mut tokens = Vec::with_capacity(ids.len());
    for t in ids {
        let i = t as usize;
        if i >= p_ref.len() {
            return Err(Error::OutOfRange {
                what: "token id",
                value: i,
                limit: p_ref.len(),
            });
        }
        if p_ref[i] <= 0.0 {
            return Err(Error::ZeroReference(t));
        }
        tokens.push(TokenError {
            token: t,
            p_subset: p_sub[i],
            p_ref: p_ref[i],
            percent_error: 100.0 * (p_sub[i] - p_ref[i]).abs() / p_ref[i],
        });
    }
    let mean = tokens.iter().map(|e| e.percent_error).sum::<f64>() / tokens.len() as f64;
    Ok(RelativeErrorReport { tokens, mean })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRunStats {
    pub k: u32,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std: f64,
    pub n_seeds: usize,
}

pub fn seed_stats(runs: &[(u64, f64)], k: u32, metric: &str) -> Result<SeedRunStats> {
    if runs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} run(s); a standard deviation needs at least 2",
            runs.len()
        )));
    }
    let n = runs.len() as f64;
    let mean = runs.iter().map(|r| r.1).sum::<f64>() / n;
    let var = runs.iter().map(|r| (r.1 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(SeedRunStats {
        k,
        metric: metric.to_string(),
        mean,
        std: var.sqrt(),
        n_seeds: runs.len(),
    })
}

/// One row of the subset report CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReportRow {
    pub k: u32,
    pub n_sequences: usize,
    pub js: f64,
    pub d_js: Option<f64>,
    pub mean_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTokenReport {
    pub k: u32,
    #[serde(flatten)]
    pub report: RelativeErrorReport,
}

/// JS curve plus top-`n` relative errors for every level.
pub fn subset_report(
    plan: &SubsetPlan,
    shard: &TokenShard,
    vocab_size: usize,
    top_n: usize,
    exclude_padding: bool,
) -> Result<(Vec<SubsetReportRow>, Vec<LevelTokenReport>)> {
    let reference = shard_distribution(shard, vocab_size, exclude_padding)?;
    let curve = js_curve(plan, shard, &reference)?;
    let selector = TokenSelector::Ids(top_tokens(reference.probs(), top_n));
    let mut rows = Vec::with_capacity(curve.len());
    let mut tokens = Vec::with_capacity(curve.len());
    for point in curve {
        let dist = level_distribution(plan, shard, point.k, &reference)?;
        let report = per_token_relative_error(dist.probs(), reference.probs(), &selector)?;
        rows.push(SubsetReportRow {
            k: point.k,
            n_sequences: point.n_sequences,
            js: point.js,
            d_js: point.d_js,
            mean_rel_err: report.mean,
        });
        tokens.push(LevelTokenReport { k: point.k, report });
    }
    Ok((rows, tokens))
}

/// CSV columns: `k,n_sequences,js,d_js,mean_rel_err` (`d_js` empty on the last row).
pub fn write_subset_csv(rows: &[SubsetReportRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "n_sequences", "js", "d_js", "mean_rel_err"])?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.n_sequences.to_string(),
            format!("{:e}", r.js),
            r.d_js.map(|d| format!("{d:e}")).unwrap_or_default(),
            format!("{:e}", r.mean_rel_err),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_token_report(reports: &[LevelTokenReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut f, reports)?;
    f.write_all(b"\n").map_err(|e| Error::io(path, e))
}
