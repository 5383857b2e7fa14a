//! Offline evaluation report: per-task AUC and NDCG@10 plus relevance NDCG.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{auc, MeanNdcg};
use crate::model::Checkpoint;
use crate::net::{Task, ENGAGEMENT_TASKS};
use crate::value::{ranking_ndcg, value_score_scaled, PairPrediction, QueryPredictions, RelScale, ValueWeights};

fn task_name(t: Task) -> &'static str {
    match t {
        Task::Ctr => "ctr",
        Task::Atc => "atc",
        Task::Cvr => "cvr",
        Task::Relevance => "relevance",
    }
}

fn outcome(p: &PairPrediction, t: Task) -> bool {
    match t {
        Task::Ctr => p.clicked,
        Task::Atc => p.added_to_cart,
        Task::Cvr => p.converted,
        Task::Relevance => p.grade.is_some_and(|g| g.value() > 0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub auc: f64,
    pub ndcg_at_10: f64,
    pub ndcg_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub head_kind: String,
    pub engagement_only: bool,
    pub queries: usize,
    pub pairs: usize,
    /// Keyed by task: ctr, atc, cvr.
    pub engagement: BTreeMap<String, TaskMetrics>,
    /// Ranking by ŝ_rel, or by ŷ_CTR for engagement-only checkpoints.
    pub relevance_ndcg_at_10: f64,
    pub relevance_score: String,
    /// Ranking by the value function S at `value_weights`.
    pub value_relevance_ndcg_at_10: f64,
    pub value_conversion_ndcg_at_10: f64,
    pub value_weights: ValueWeights,
    pub relevance_skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    pub value_weights: ValueWeights,
    pub rel_scale: RelScale,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            value_weights: ValueWeights::default(),
            rel_scale: RelScale::Raw,
        }
    }
}

fn grade_gain(p: &PairPrediction) -> f64 {
    p.grade.map_or(0.0, |g| g.as_f64())
}

pub fn evaluate(ck: &Checkpoint, preds: &[QueryPredictions], opts: &EvalOptions) -> Result<EvalReport> {
    opts.value_weights.validate()?;
    if preds.is_empty() {
        return Err(Error::Invalid("evaluation set has no queries".into()));
    }
    for q in preds {
        if let Some(p) = q.pairs.iter().find(|p| p.grade.is_none()) {
            return Err(Error::Invalid(format!(
                "relevance NDCG needs grades; pair ({}, {}) has none",
                q.query_id, p.item_id
            )));
        }
    }
    let all: Vec<&PairPrediction> = preds.iter().flat_map(|q| &q.pairs).collect();

    let mut engagement = BTreeMap::new();
    for t in ENGAGEMENT_TASKS {
        let scores: Vec<f64> = all.iter().map(|p| p.outputs.engagement(t)).collect();
        let labels: Vec<bool> = all.iter().map(|p| outcome(p, t)).collect();
        let a = auc(&scores, &labels).map_err(|e| Error::Invalid(format!("{} AUC: {e}", task_name(t))))?;
        let n = ranking_ndcg(preds, |p| p.outputs.engagement(t), |p| f64::from(u8::from(outcome(p, t))))?;
        engagement.insert(
            task_name(t).to_string(),
            TaskMetrics {
                auc: a,
                ndcg_at_10: n.mean,
                ndcg_skipped: n.skipped,
            },
        );
    }

    let rel: MeanNdcg = ranking_ndcg(preds, |p| ck.relevance_score(&p.outputs), grade_gain)?;
    let value = |p: &PairPrediction| {
        value_score_scaled(&p.outputs, &opts.value_weights, opts.rel_scale).unwrap_or(f64::NAN)
    };
    let value_rel = ranking_ndcg(preds, value, grade_gain)?;
    let value_conv = ranking_ndcg(preds, value, |p| f64::from(u8::from(p.converted)))?;

    Ok(EvalReport {
        config_hash: ck.config_hash.clone(),
        head_kind: ck.head_kind().name().to_string(),
        engagement_only: ck.engagement_only,
        queries: preds.len(),
        pairs: all.len(),
        engagement,
        relevance_ndcg_at_10: rel.mean,
        relevance_score: if ck.engagement_only { "y_ctr" } else { "s_rel" }.to_string(),
        value_relevance_ndcg_at_10: value_rel.mean,
        value_conversion_ndcg_at_10: value_conv.mean,
        value_weights: opts.value_weights,
        relevance_skipped: rel.skipped,
    })
}
