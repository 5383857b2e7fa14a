//! Serving-time value function, listwise ranking and the relevance/conversion
//! trade-off sweep.
//!
//! `S = α·ŷ_ctr + β·ŷ_atc + γ·ŷ_cvr + (1 − α − β − γ)·ŝ_rel`, where `ŝ_rel`
//! is the expected grade on [0, 2].

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::domain::RelevanceGrade;
use crate::error::{Error, Result};
use crate::metrics::mean_ndcg;
use crate::net::{scalar_relevance, HeadOutputs};

pub const NDCG_CUTOFF: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ValueWeights {
    /// α = β = γ = 0.3, leaving 0.1 for relevance.
    fn default() -> Self {
        ValueWeights {
            alpha: 0.3,
            beta: 0.3,
            gamma: 0.3,
        }
    }
}

impl ValueWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = ValueWeights { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    /// Engagement-only weights scaled to sum to one (relevance weight 0).
    pub fn engagement_only(self) -> Result<Self> {
        let s = self.alpha + self.beta + self.gamma;
        if s <= 0.0 {
            return Err(Error::Invalid("cannot rescale all-zero engagement weights".into()));
        }
        Self::new(self.alpha / s, self.beta / s, self.gamma / s)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.alpha, self.beta, self.gamma];
        if parts.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Invalid(format!(
                "value weights must lie in [0, 1], got {parts:?}"
            )));
        }
        if self.alpha + self.beta + self.gamma > 1.0 + 1e-12 {
            return Err(Error::Invalid(format!(
                "alpha + beta + gamma must be <= 1, got {}",
                self.alpha + self.beta + self.gamma
            )));
        }
        Ok(())
    }

    pub fn relevance_weight(&self) -> f64 {
        (1.0 - self.alpha - self.beta - self.gamma).max(0.0)
    }
}

/// How `ŝ_rel` enters a score: raw on [0, 2] or divided by two.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelScale {
    #[default]
    Raw,
    Halved,
}

impl RelScale {
    pub fn apply(self, s_rel: f64) -> f64 {
        match self {
            RelScale::Raw => s_rel,
            RelScale::Halved => s_rel / 2.0,
        }
    }
}

pub fn value_score(outputs: &HeadOutputs, w: &ValueWeights) -> Result<f64> {
    value_score_scaled(outputs, w, RelScale::Raw)
}

pub fn value_score_scaled(outputs: &HeadOutputs, w: &ValueWeights, scale: RelScale) -> Result<f64> {
    w.validate()?;
    Ok(value_score_unchecked(outputs, w, scale))
}

pub(crate) fn value_score_unchecked(outputs: &HeadOutputs, w: &ValueWeights, scale: RelScale) -> f64 {
    w.alpha * outputs.y_ctr
        + w.beta * outputs.y_atc
        + w.gamma * outputs.y_cvr
        + w.relevance_weight() * scale.apply(scalar_relevance(outputs))
}

fn by_score_then_id(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// Item ids sorted by descending score; equal scores go in ascending id order.
pub fn rank_items(scored: &[(String, f64)]) -> Result<Vec<String>> {
    let ids: Vec<&str> = scored.iter().map(|(id, _)| id.as_str()).collect();
    let scores: Vec<f64> = scored.iter().map(|(_, s)| *s).collect();
    Ok(rank_order(&ids, &scores)?
        .into_iter()
        .map(|i| scored[i].0.clone())
        .collect())
}

/// Indices of `ids` in ranked order under the same rule as [`rank_items`].
pub fn rank_order(ids: &[&str], scores: &[f64]) -> Result<Vec<usize>> {
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Invalid(format!("non-finite score for item {}", ids[i])));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| by_score_then_id((ids[a], scores[a]), (ids[b], scores[b])));
    Ok(order)
}

/// Model outputs and observed outcomes for one query-item pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPrediction {
    pub item_id: String,
    pub outputs: HeadOutputs,
    pub grade: Option<RelevanceGrade>,
    pub clicked: bool,
    pub added_to_cart: bool,
    pub converted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryPredictions {
    pub query_id: String,
    pub pairs: Vec<PairPrediction>,
}

impl QueryPredictions {
    /// Pair indices ranked by `score`.
    pub fn ranked(&self, mut score: impl FnMut(&PairPrediction) -> f64) -> Result<Vec<usize>> {
        let ids: Vec<&str> = self.pairs.iter().map(|p| p.item_id.as_str()).collect();
        let scores: Vec<f64> = self.pairs.iter().map(&mut score).collect();
        rank_order(&ids, &scores)
    }
}

/// Mean NDCG@10 of the ranking induced by `score`, with gains taken from
/// `target` (a grade, or 0/1 for a binary outcome).
pub fn ranking_ndcg(
    preds: &[QueryPredictions],
    mut score: impl FnMut(&PairPrediction) -> f64,
    target: impl Fn(&PairPrediction) -> f64,
) -> Result<crate::metrics::MeanNdcg> {
    let lists = preds
        .iter()
        .map(|q| {
            let order = q.ranked(&mut score)?;
            Ok(order.into_iter().map(|i| target(&q.pairs[i])).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    mean_ndcg(lists.iter().map(Vec::as_slice), NDCG_CUTOFF)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub relevance_weight: f64,
    pub ndcg_relevance: f64,
    pub ndcg_conversion: f64,
}

/// Score used by the sweep: `w·ŝ_rel + (1 − w)·ŷ_cvr`.
pub fn sweep_score(outputs: &HeadOutputs, w: f64, scale: RelScale) -> f64 {
    w * scale.apply(scalar_relevance(outputs)) + (1.0 - w) * outputs.y_cvr
}

/// Relevance and conversion NDCG@10 at each relevance weight in `grid`.
pub fn tradeoff_sweep(preds: &[QueryPredictions], grid: &[f64], scale: RelScale) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::Invalid("sweep grid is empty".into()));
    }
    if let Some(w) = grid.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(Error::Invalid(format!("sweep weight {w} outside [0, 1]")));
    }
    for q in preds {
        if let Some(p) = q.pairs.iter().find(|p| p.grade.is_none()) {
            return Err(Error::Invalid(format!(
                "sweep needs graded pairs; ({}, {}) is unlabeled",
                q.query_id, p.item_id
            )));
        }
    }
    grid.iter()
        .map(|&w| {
            let score = |p: &PairPrediction| sweep_score(&p.outputs, w, scale);
            let rel = ranking_ndcg(preds, score, |p| p.grade.map_or(0.0, |g| g.as_f64()))?;
            let conv = ranking_ndcg(preds, score, |p| f64::from(u8::from(p.converted)))?;
            Ok(SweepPoint {
                relevance_weight: w,
                ndcg_relevance: rel.mean,
                ndcg_conversion: conv.mean,
            })
        })
        .collect()
}

/// Parses `start:end:step` (inclusive) or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Invalid(format!("bad grid spec {spec:?}; use start:end:step or a,b,c"));
    if spec.contains(':') {
        let parts: Vec<f64> = spec
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [start, end, step] = parts[..] else {
            return Err(bad());
        };
        if !(step > 0.0) || end < start {
            return Err(bad());
        }
        let n = ((end - start) / step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| start + i as f64 * step).map(|w| (w * 1e9).round() / 1e9).collect())
    } else {
        spec.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect()
    }
}

/// `relevance_weight,ndcg_relevance,ndcg_conversion` with six decimals.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("relevance_weight,ndcg_relevance,ndcg_conversion\n");
    for p in points {
        out.push_str(&format!(
            "{:.6},{:.6},{:.6}\n",
            p.relevance_weight, p.ndcg_relevance, p.ndcg_conversion
        ));
    }
    out
}
