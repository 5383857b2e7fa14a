//! Multi-stage relevance label refinement.
//!
//! 1. Rank every candidate's smoothed historical ATCR and CVR within its
//!    query (rank 1 = best; percentile = average rank / set size).
//! 2. Flag a human-labeled pair for audit when the human grade is 0 and both
//!    percentiles are ≤ 0.5.
//! 3. Ask the audit oracle for a grade on each flagged pair.
//! 4. Reconcile with the category predictor: if the item's category is in
//!    the query's predicted set take the higher grade, otherwise the lower.
//! 5. Label pairs that have no human grade with the bulk oracle.

pub mod oracle;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, RelevanceGrade};
use crate::error::{Error, Result};
use crate::featurizer::{historical_rates, RatePriors};

pub use oracle::{
    grade_batch, query_oracle, render_item, render_query, OracleConfig, OracleKind, OracleRequest, RelevanceOracle,
    RuleBasedOracle,
};

pub type PairKey = (String, String);

/// Human grades keyed by (query_id, item_id).
pub type HumanLabels = BTreeMap<PairKey, RelevanceGrade>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    HumanOnly,
    AuditedMax,
    AuditedMin,
    /// No human label; graded by the bulk labeler.
    LlmLabeled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub query_id: String,
    pub item_id: String,
    pub human_grade: Option<RelevanceGrade>,
    pub audit_grade: Option<RelevanceGrade>,
    pub final_grade: RelevanceGrade,
    pub provenance: Provenance,
}

impl LabelRecord {
    /// Checks the provenance ⇒ final-grade equation.
    pub fn is_consistent(&self) -> bool {
        match (self.provenance, self.human_grade, self.audit_grade) {
            (Provenance::HumanOnly, Some(h), None) => self.final_grade == h,
            (Provenance::AuditedMax, Some(h), Some(a)) => self.final_grade == h.max(a),
            (Provenance::AuditedMin, Some(h), Some(a)) => self.final_grade == h.min(a),
            (Provenance::LlmLabeled, None, None) => true,
            _ => false,
        }
    }
}

/// Query-to-category predictions used to arbitrate audits.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryPredictor {
    predictions: BTreeMap<String, BTreeSet<String>>,
}

impl CategoryPredictor {
    pub fn new(predictions: BTreeMap<String, BTreeSet<String>>) -> Self {
        CategoryPredictor { predictions }
    }

    /// Predicts each query's own intent category.
    pub fn from_intents(ds: &Dataset) -> Self {
        CategoryPredictor {
            predictions: ds
                .queries()
                .iter()
                .map(|q| (q.id.clone(), BTreeSet::from([q.intent_category.clone()])))
                .collect(),
        }
    }

    /// Loads a JSON object mapping query id to a list of categories.
    pub fn load(path: &Path) -> Result<Self> {
        Ok(CategoryPredictor {
            predictions: crate::io::read_json(path)?,
        })
    }

    /// Predicted categories; empty for unknown queries.
    pub fn predicted(&self, query_id: &str) -> BTreeSet<String> {
        self.predictions.get(query_id).cloned().unwrap_or_default()
    }
}

pub fn audit_trigger(human: RelevanceGrade, atcr_percentile: f64, cvr_percentile: f64) -> bool {
    human == RelevanceGrade::IRRELEVANT && atcr_percentile <= 0.5 && cvr_percentile <= 0.5
}

pub fn reconcile_q2t(
    human: RelevanceGrade,
    audit: RelevanceGrade,
    item_category: &str,
    predicted: &BTreeSet<String>,
) -> (RelevanceGrade, Provenance) {
    if predicted.contains(item_category) {
        (human.max(audit), Provenance::AuditedMax)
    } else {
        (human.min(audit), Provenance::AuditedMin)
    }
}

/// Percentile of each value within `values`, best (largest) first: average
/// 1-based rank divided by the set size.
pub fn percentile_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            out[k] = avg_rank / n as f64;
        }
        i = j + 1;
    }
    out
}

/// Per-pair (ATCR, CVR) percentiles within each query's candidate set.
pub fn engagement_percentiles(ds: &Dataset, prior_strength: f64) -> Result<HashMap<PairKey, (f64, f64)>> {
    let priors = RatePriors::from_items(ds.items());
    let mut out = HashMap::with_capacity(ds.impressions().len());
    for (q, idx) in ds.groups() {
        let mut atcr = Vec::with_capacity(idx.len());
        let mut cvr = Vec::with_capacity(idx.len());
        for &i in &idx {
            let imp = &ds.impressions()[i];
            let item = ds
                .item(&imp.item_id)
                .ok_or_else(|| Error::Referential(format!("no stats for item {}", imp.item_id)))?;
            let r = historical_rates(&item.stats, prior_strength, &priors);
            atcr.push(r.atcr);
            cvr.push(r.cvr);
        }
        let (pa, pc) = (percentile_ranks(&atcr), percentile_ranks(&cvr));
        for (k, &i) in idx.iter().enumerate() {
            out.insert((q.id.clone(), ds.impressions()[i].item_id.clone()), (pa[k], pc[k]));
        }
    }
    Ok(out)
}

/// Copies ground-truth grades and moves each by one step with probability
/// `noise_rate` (grade 0 and 2 can only move to 1).
pub fn simulate_human_labels(ds: &Dataset, noise_rate: f64, seed: u64) -> Result<HumanLabels> {
    if !(0.0..=1.0).contains(&noise_rate) {
        return Err(Error::Invalid(format!("noise_rate {noise_rate} outside [0, 1]")));
    }
    let mut truth: Vec<(PairKey, RelevanceGrade)> = ds
        .impressions()
        .iter()
        .map(|imp| {
            imp.grade
                .map(|g| ((imp.query_id.clone(), imp.item_id.clone()), g))
                .ok_or_else(|| {
                    Error::Invalid(format!(
                        "pair ({}, {}) has no ground-truth grade to simulate from",
                        imp.query_id, imp.item_id
                    ))
                })
        })
        .collect::<Result<_>>()?;
    truth.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(truth
        .into_iter()
        .map(|(k, g)| {
            let flip = rng.gen_bool(noise_rate);
            let up = rng.gen_bool(0.5);
            (k, if flip { g.step(up) } else { g })
        })
        .collect())
}

/// Keeps the human labels of a seeded fraction of pairs.
pub fn subsample_labels(labels: &HumanLabels, coverage: f64, seed: u64) -> HumanLabels {
    labels
        .iter()
        .filter(|((q, i), _)| crate::io::unit_interval(crate::io::stable_hash(seed, &[q, i])) < coverage)
        .map(|(k, g)| (k.clone(), *g))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    /// Smoothing strength for the ATCR/CVR percentiles.
    pub prior_strength: f64,
    /// In-flight oracle calls for the audit and bulk stages.
    pub audit_concurrency: usize,
    pub bulk_concurrency: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            prior_strength: 10.0,
            audit_concurrency: 4,
            bulk_concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub pairs: usize,
    pub human_labeled: usize,
    pub triggered: usize,
    pub provenance_counts: BTreeMap<Provenance, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    /// Sorted by (query_id, item_id).
    pub records: Vec<LabelRecord>,
    pub report: PipelineReport,
}

pub fn run_pipeline(
    ds: &Dataset,
    human: &HumanLabels,
    audit: &dyn RelevanceOracle,
    bulk: &dyn RelevanceOracle,
    q2t: &CategoryPredictor,
    opts: &PipelineOptions,
) -> Result<PipelineOutput> {
    let percentiles = engagement_percentiles(ds, opts.prior_strength)?;

    let mut pairs: Vec<PairKey> = ds
        .impressions()
        .iter()
        .map(|imp| (imp.query_id.clone(), imp.item_id.clone()))
        .collect();
    pairs.sort();

    let request = |(q, i): &PairKey| -> Result<OracleRequest> {
        let query = ds.query(q).ok_or_else(|| Error::Referential(format!("unknown query {q}")))?;
        let item = ds.item(i).ok_or_else(|| Error::Referential(format!("unknown item {i}")))?;
        Ok(OracleRequest {
            query_id: q.clone(),
            item_id: i.clone(),
            query: render_query(query),
            item: render_item(item),
        })
    };

    let mut audit_keys = Vec::new();
    let mut bulk_keys = Vec::new();
    for key in &pairs {
        match human.get(key) {
            Some(&h) => {
                let (pa, pc) = percentiles[key];
                if audit_trigger(h, pa, pc) {
                    audit_keys.push(key.clone());
                }
            }
            None => bulk_keys.push(key.clone()),
        }
    }

    let audit_reqs = audit_keys.iter().map(&request).collect::<Result<Vec<_>>>()?;
    let audit_grades: HashMap<&PairKey, RelevanceGrade> = audit_keys
        .iter()
        .zip(grade_batch(audit, &audit_reqs, opts.audit_concurrency)?)
        .collect();
    let bulk_reqs = bulk_keys.iter().map(&request).collect::<Result<Vec<_>>>()?;
    let bulk_grades: HashMap<&PairKey, RelevanceGrade> = bulk_keys
        .iter()
        .zip(grade_batch(bulk, &bulk_reqs, opts.bulk_concurrency)?)
        .collect();

    let mut report = PipelineReport {
        pairs: pairs.len(),
        human_labeled: pairs.len() - bulk_keys.len(),
        triggered: audit_keys.len(),
        provenance_counts: BTreeMap::new(),
    };
    let records: Vec<LabelRecord> = pairs
        .iter()
        .map(|key| {
            let (q, i) = key;
            let rec = match (human.get(key), audit_grades.get(key)) {
                (Some(&h), Some(&a)) => {
                    let category = &ds.item(i).expect("checked above").category;
                    let (final_grade, provenance) = reconcile_q2t(h, a, category, &q2t.predicted(q));
                    LabelRecord {
                        query_id: q.clone(),
                        item_id: i.clone(),
                        human_grade: Some(h),
                        audit_grade: Some(a),
                        final_grade,
                        provenance,
                    }
                }
                (Some(&h), None) => LabelRecord {
                    query_id: q.clone(),
                    item_id: i.clone(),
                    human_grade: Some(h),
                    audit_grade: None,
                    final_grade: h,
                    provenance: Provenance::HumanOnly,
                },
                (None, _) => LabelRecord {
                    query_id: q.clone(),
                    item_id: i.clone(),
                    human_grade: None,
                    audit_grade: None,
                    final_grade: bulk_grades[key],
                    provenance: Provenance::LlmLabeled,
                },
            };
            *report.provenance_counts.entry(rec.provenance).or_default() += 1;
            rec
        })
        .collect();
    Ok(PipelineOutput { records, report })
}

/// Three-class accuracy and within-one accuracy.
pub fn labeler_accuracy(predictions: &[RelevanceGrade], references: &[RelevanceGrade]) -> Result<(f64, f64)> {
    if predictions.len() != references.len() {
        return Err(Error::Invalid(format!(
            "labeler_accuracy: {} predictions vs {} references",
            predictions.len(),
            references.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Invalid("labeler_accuracy: empty input".into()));
    }
    let n = predictions.len() as f64;
    let (mut exact, mut within) = (0usize, 0usize);
    for (p, r) in predictions.iter().zip(references) {
        let d = (p.value() as i32 - r.value() as i32).abs();
        exact += usize::from(d == 0);
        within += usize::from(d <= 1);
    }
    Ok((exact as f64 / n, within as f64 / n))
}

pub fn write_labels_jsonl(records: &[LabelRecord], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    crate::io::write_atomic(path, &buf)
}

pub fn read_labels_jsonl(path: &Path) -> Result<Vec<LabelRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
