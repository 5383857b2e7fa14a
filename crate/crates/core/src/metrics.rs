//! Offline ranking metrics: AUC and graded NDCG@k.
//!
//! NDCG uses gain `2^g − 1` and discount `log2(i + 1)` for 1-based rank `i`.
//! Binary engagement labels are passed as grades 0/1 (gain 0/1).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Area under the ROC curve as the Mann-Whitney statistic, with ties
/// counted as one half. O(n log n) via average ranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "auc: {} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Invalid("auc needs at least one positive and one negative label".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Invalid("auc: NaN score".into()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of 1-based average ranks of the positives, kept doubled so it
    // stays an exact integer.
    let mut pos_rank_sum_x2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank_x2 = (i + 1 + j + 1) as u64;
        let pos_in_tie = order[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        pos_rank_sum_x2 += avg_rank_x2 * pos_in_tie;
        i = j + 1;
    }
    let n_pos = n_pos as u64;
    let u_x2 = pos_rank_sum_x2 - n_pos * (n_pos + 1);
    Ok(u_x2 as f64 / (2 * n_pos * n_neg as u64) as f64)
}

pub fn gain(grade: f64) -> f64 {
    grade.exp2() - 1.0
}

/// DCG over the first `k` entries of `grades`, which are in ranked order.
pub fn dcg_at_k(grades: &[f64], k: usize) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / ((i + 2) as f64).log2())
        .sum()
}

/// DCG normalized by the ideal ordering; `None` when every gain is zero.
pub fn ndcg_at_k(grades: &[f64], k: usize) -> Option<f64> {
    let mut ideal = grades.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg_at_k(&ideal, k);
    if idcg <= 0.0 {
        None
    } else {
        Some(dcg_at_k(grades, k) / idcg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanNdcg {
    pub mean: f64,
    pub evaluated: usize,
    /// Queries excluded because all their gains were zero.
    pub skipped: usize,
}

/// Mean NDCG@k over queries; all-zero queries are skipped and counted.
pub fn mean_ndcg<'a>(lists: impl IntoIterator<Item = &'a [f64]>, k: usize) -> Result<MeanNdcg> {
    let mut sum = 0.0;
    let mut evaluated = 0;
    let mut skipped = 0;
    for grades in lists {
        match ndcg_at_k(grades, k) {
            Some(v) => {
                sum += v;
                evaluated += 1;
            }
            None => skipped += 1,
        }
    }
    if evaluated == 0 {
        return Err(Error::Invalid(format!(
            "no query has a non-zero gain ({skipped} skipped)"
        )));
    }
    Ok(MeanNdcg {
        mean: sum / evaluated as f64,
        evaluated,
        skipped,
    })
}
