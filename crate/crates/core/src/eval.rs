//! Recall@K, mean Recall@K and confusion matrices.
//!
//! Ranking ties always go to the lower class index, matching the argmax
//! used for prediction.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{ClassId, LabelSpace};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("k = {k} is outside 1..={num_classes}")]
    KOutOfRange { k: usize, num_classes: usize },
    #[error("{scores} score vectors but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("sample {index} has {found} scores, expected {expected}")]
    ScoreLength {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("sample {index} has label {label} outside the {num_classes}-class space")]
    LabelOutOfRange {
        index: usize,
        label: ClassId,
        num_classes: usize,
    },
    #[error("nothing to evaluate")]
    Empty,
}

/// Position of `label` in the descending ranking of `scores` (0 = top).
fn rank_of(scores: &[f64], label: ClassId) -> usize {
    let s = scores[label];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < label))
        .count()
}

fn check(scores: &[Vec<f64>], labels: &[ClassId], k: Option<usize>) -> Result<usize, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let d = scores.first().ok_or(EvalError::Empty)?.len();
    for (index, (s, &l)) in scores.iter().zip(labels).enumerate() {
        if s.len() != d {
            return Err(EvalError::ScoreLength {
                index,
                expected: d,
                found: s.len(),
            });
        }
        if l >= d {
            return Err(EvalError::LabelOutOfRange {
                index,
                label: l,
                num_classes: d,
            });
        }
    }
    if let Some(k) = k {
        if k == 0 || k > d {
            return Err(EvalError::KOutOfRange { k, num_classes: d });
        }
    }
    Ok(d)
}

/// Fraction of samples whose label ranks in the top `k`.
pub fn recall_at_k(scores: &[Vec<f64>], labels: &[ClassId], k: usize) -> Result<f64, EvalError> {
    check(scores, labels, Some(k))?;
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, &l)| rank_of(s, l) < k)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Per-class Recall@K (`None` for classes with no samples) and their
/// unweighted mean over classes that have samples.
pub fn mean_recall_at_k(
    scores: &[Vec<f64>],
    labels: &[ClassId],
    k: usize,
) -> Result<(f64, Vec<Option<f64>>), EvalError> {
    let d = check(scores, labels, Some(k))?;
    let mut hits = vec![0usize; d];
    let mut totals = vec![0usize; d];
    for (s, &l) in scores.iter().zip(labels) {
        totals[l] += 1;
        if rank_of(s, l) < k {
            hits[l] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    Ok((mean, per_class))
}

/// `m[i][j]` = samples of class `i` whose argmax is `j`.
pub fn confusion_matrix(scores: &[Vec<f64>], labels: &[ClassId]) -> Result<Vec<Vec<u64>>, EvalError> {
    let d = check(scores, labels, None)?;
    let mut m = vec![vec![0u64; d]; d];
    for (s, &l) in scores.iter().zip(labels) {
        let pred = (0..d)
            .find(|&j| rank_of(s, j) == 0)
            .expect("one class always ranks first");
        m[l][pred] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRecall {
    pub name: String,
    /// Evaluation samples of this class.
    pub support: u64,
    /// Recall at each configured K; `None` when `support` is zero.
    pub recall: Vec<Option<f64>>,
}

/// Everything reported for one evaluated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: u32,
    pub ks: Vec<usize>,
    pub mean_recall: Vec<f64>,
    pub recall: Vec<f64>,
    pub per_class: Vec<ClassRecall>,
    /// Classes with no evaluation samples, left out of the means.
    pub excluded: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
    /// Training counts of each class, for head/tail breakdowns.
    pub train_counts: Vec<u64>,
}

impl MetricsReport {
    pub fn build(
        scores: &[Vec<f64>],
        labels: &[ClassId],
        space: &LabelSpace,
        ks: &[usize],
    ) -> Result<Self, EvalError> {
        let d = check(scores, labels, None)?;
        if d != space.len() {
            return Err(EvalError::ScoreLength {
                index: 0,
                expected: space.len(),
                found: d,
            });
        }
        let mut mean_recall = Vec::with_capacity(ks.len());
        let mut recall = Vec::with_capacity(ks.len());
        let mut per_k = Vec::with_capacity(ks.len());
        for &k in ks {
            let (m, pc) = mean_recall_at_k(scores, labels, k)?;
            mean_recall.push(m);
            recall.push(recall_at_k(scores, labels, k)?);
            per_k.push(pc);
        }
        let confusion = confusion_matrix(scores, labels)?;
        let per_class: Vec<ClassRecall> = (0..d)
            .map(|c| ClassRecall {
                name: space.name(c).to_string(),
                support: confusion[c].iter().sum(),
                recall: per_k.iter().map(|pc| pc[c]).collect(),
            })
            .collect();
        let excluded = per_class
            .iter()
            .filter(|c| c.support == 0)
            .map(|c| c.name.clone())
            .collect();
        Ok(MetricsReport {
            version: 1,
            ks: ks.to_vec(),
            mean_recall,
            recall,
            per_class,
            excluded,
            confusion,
            train_counts: space.counts().to_vec(),
        })
    }

    /// Mean per-class Recall at `ks[k_index]` over classes selected by `keep`.
    pub fn group_mean_recall(&self, k_index: usize, keep: impl Fn(ClassId) -> bool) -> f64 {
        let vals: Vec<f64> = self
            .per_class
            .iter()
            .enumerate()
            .filter(|&(c, _)| keep(c))
            .filter_map(|(_, r)| r.recall[k_index])
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports always serialize");
        s.push('\n');
        s
    }

    /// Aligned plain-text table, one row per class, then the summary rows.
    pub fn to_table(&self) -> String {
        let width = self
            .per_class
            .iter()
            .map(|c| c.name.len())
            .chain([5])
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        let _ = write!(out, "{:<width$}  {:>6}", "class", "n");
        for k in &self.ks {
            let _ = write!(out, "  {:>7}", format!("R@{k}"));
        }
        out.push('\n');
        for c in &self.per_class {
            let _ = write!(out, "{:<width$}  {:>6}", c.name, c.support);
            for r in &c.recall {
                match r {
                    Some(v) => {
                        let _ = write!(out, "  {v:>7.4}");
                    }
                    None => {
                        let _ = write!(out, "  {:>7}", "-");
                    }
                }
            }
            out.push('\n');
        }
        let total: u64 = self.per_class.iter().map(|c| c.support).sum();
        let _ = write!(out, "{:<width$}  {:>6}", "mR@K", "");
        for v in &self.mean_recall {
            let _ = write!(out, "  {v:>7.4}");
        }
        out.push('\n');
        let _ = write!(out, "{:<width$}  {:>6}", "R@K", total);
        for v in &self.recall {
            let _ = write!(out, "  {v:>7.4}");
        }
        out.push('\n');
        out
    }
}
