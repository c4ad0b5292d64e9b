//! Token importance scoring, top-k selection and position-map bookkeeping.
//!
//! Scores are computed on the raw (ungated) scan outputs in original token
//! order, so a single keep decision is consistent across all scan
//! directions. A `PositionMap` records which original indices survive; maps
//! from consecutive pruning stages compose into one map over the first
//! stage's index space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::TokenTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Mean of non-negative channel values; negative activations are
    /// clipped to zero before aggregation.
    ClippedMean,
    L1Norm,
    L2Norm,
    UnclippedMean,
}

/// Per-token importance values, one row per batch entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceScores {
    batch: usize,
    tokens: usize,
    scores: Vec<f64>,
    pub metric: Metric,
}

impl ImportanceScores {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    #[inline]
    pub fn score(&self, b: usize, t: usize) -> f64 {
        self.scores[b * self.tokens + t]
    }

    /// Scores averaged over the batch; the per-stage keep decision is shared
    /// by all batch entries.
    pub fn batch_mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.tokens];
        for b in 0..self.batch {
            for (t, o) in out.iter_mut().enumerate() {
                *o += self.score(b, t);
            }
        }
        let inv = 1.0 / self.batch as f64;
        for o in &mut out {
            *o *= inv;
        }
        out
    }
}

fn score_token(channels: &[f64], metric: Metric) -> f64 {
    let d = channels.len() as f64;
    match metric {
        Metric::ClippedMean => channels.iter().map(|&v| v.max(0.0)).sum::<f64>() / d,
        Metric::L1Norm => channels.iter().map(|&v| v.abs()).sum::<f64>() / d,
        Metric::L2Norm => (channels.iter().map(|&v| v * v).sum::<f64>() / d).sqrt(),
        Metric::UnclippedMean => channels.iter().sum::<f64>() / d,
    }
}

/// Per-token importance of one scan output.
pub fn importance_scores(y: &TokenTensor, metric: Metric) -> Result<ImportanceScores> {
    if y.channels() == 0 {
        return Err(Error::shape("importance scoring needs at least one channel"));
    }
    let mut scores = Vec::with_capacity(y.batch() * y.tokens());
    for b in 0..y.batch() {
        for t in 0..y.tokens() {
            scores.push(score_token(y.token(b, t), metric));
        }
    }
    Ok(ImportanceScores {
        batch: y.batch(),
        tokens: y.tokens(),
        scores,
        metric,
    })
}

/// Importance over several scan directions: the arithmetic mean of the
/// per-direction scores, which is symmetric under direction swap.
pub fn importance_scores_multi(ys: &[&TokenTensor], metric: Metric) -> Result<ImportanceScores> {
    let first = *ys
        .first()
        .ok_or_else(|| Error::shape("importance scoring needs at least one direction"))?;
    let mut acc = importance_scores(first, metric)?;
    for y in &ys[1..] {
        if !y.same_shape(first) {
            return Err(Error::shape("direction outputs must share one shape"));
        }
        let s = importance_scores(y, metric)?;
        for (a, v) in acc.scores.iter_mut().zip(&s.scores) {
            *a += *v;
        }
    }
    let inv = 1.0 / ys.len() as f64;
    for a in &mut acc.scores {
        *a *= inv;
    }
    Ok(acc)
}

/// Record of kept original indices after pruning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositionMap {
    original_len: usize,
    keep: Vec<bool>,
    remaining_indices: Vec<usize>,
}

impl PositionMap {
    /// `kept` must be strictly increasing, non-empty and within range.
    pub fn from_kept(original_len: usize, kept: Vec<usize>) -> Result<Self> {
        if kept.is_empty() {
            return Err(Error::domain("a position map must keep at least one token"));
        }
        let mut keep = vec![false; original_len];
        let mut prev: Option<usize> = None;
        for &q in &kept {
            if q >= original_len {
                return Err(Error::shape(format!(
                    "kept index {q} out of range for length {original_len}"
                )));
            }
            if let Some(p) = prev {
                if q <= p {
                    return Err(Error::shape("kept indices must be strictly increasing"));
                }
            }
            keep[q] = true;
            prev = Some(q);
        }
        Ok(PositionMap {
            original_len,
            keep,
            remaining_indices: kept,
        })
    }

    pub fn all_keep(original_len: usize) -> Result<Self> {
        PositionMap::from_kept(original_len, (0..original_len).collect())
    }

    pub fn original_len(&self) -> usize {
        self.original_len
    }

    pub fn kept_len(&self) -> usize {
        self.remaining_indices.len()
    }

    pub fn is_all_keep(&self) -> bool {
        self.kept_len() == self.original_len
    }

    #[inline]
    pub fn is_kept(&self, original_index: usize) -> bool {
        self.keep[original_index]
    }

    pub fn remaining_indices(&self) -> &[usize] {
        &self.remaining_indices
    }

    /// Wire form: the bare JSON array of kept original indices.
    pub fn to_json_array(&self) -> String {
        serde_json::to_string(&self.remaining_indices).expect("indices serialize")
    }

    pub fn from_json_array(original_len: usize, json: &str) -> Result<Self> {
        let kept: Vec<usize> = serde_json::from_str(json)?;
        PositionMap::from_kept(original_len, kept)
    }
}

/// Settings of the pruning schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Fraction of tokens retained at each scheduled stage, in (0, 1].
    pub keep_rate: f64,
    /// 1-based layer indices; pruning runs after each listed layer.
    pub prune_after_layers: Vec<usize>,
    pub metric: Metric,
}

impl PruneConfig {
    pub fn validate(&self, depth: usize) -> Result<()> {
        if !(self.keep_rate > 0.0 && self.keep_rate <= 1.0) {
            return Err(Error::config(format!(
                "keep_rate {} must be in (0, 1]",
                self.keep_rate
            )));
        }
        let mut prev = 0usize;
        for &l in &self.prune_after_layers {
            if l == 0 || l > depth {
                return Err(Error::config(format!(
                    "prune_after_layers entry {l} outside [1, {depth}]"
                )));
            }
            if l <= prev {
                return Err(Error::config("prune_after_layers must be strictly increasing"));
            }
            prev = l;
        }
        Ok(())
    }

    /// Tokens surviving one stage: `round(keep_rate * current)`, at least 1.
    pub fn keep_count(&self, current: usize) -> usize {
        ((self.keep_rate * current as f64).round() as usize).clamp(1, current)
    }
}

/// Keeps the `keep_count` highest-scoring tokens; ties keep the lower
/// original index. Batch entries share one decision via the batch-mean
/// score. Returned indices are ascending regardless of score order.
pub fn select_tokens(s: &ImportanceScores, keep_count: usize) -> Result<PositionMap> {
    if keep_count == 0 || keep_count > s.tokens() {
        return Err(Error::domain(format!(
            "keep_count {keep_count} outside [1, {}]",
            s.tokens()
        )));
    }
    let mean = s.batch_mean();
    let mut order: Vec<usize> = (0..mean.len()).collect();
    order.sort_by(|&i, &j| mean[j].total_cmp(&mean[i]).then(i.cmp(&j)));
    let mut kept: Vec<usize> = order[..keep_count].to_vec();
    kept.sort_unstable();
    PositionMap::from_kept(s.tokens(), kept)
}

/// Composes two pruning stages: `inner` is defined over `outer`'s survivors
/// and the result is expressed over `outer`'s original index space.
pub fn compose_maps(outer: &PositionMap, inner: &PositionMap) -> Result<PositionMap> {
    if inner.original_len() != outer.kept_len() {
        return Err(Error::shape(format!(
            "inner map covers {} tokens, outer keeps {}",
            inner.original_len(),
            outer.kept_len()
        )));
    }
    let kept = inner
        .remaining_indices()
        .iter()
        .map(|&j| outer.remaining_indices()[j])
        .collect();
    PositionMap::from_kept(outer.original_len(), kept)
}
