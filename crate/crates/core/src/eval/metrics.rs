//! Rank-based retrieval metrics and set-based matching metrics. All tie
//! handling is deterministic: equal similarities rank by lower gallery
//! index.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub task: String,
    pub metrics: BTreeMap<String, f64>,
    pub n_queries: usize,
    pub k_values: Vec<usize>,
    /// Queries dropped because nothing in the gallery can match them.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub excluded_queries: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

fn validate_similarity(s: &Array2<f64>, truth: &[BTreeSet<usize>]) -> Result<()> {
    let (q, g) = s.dim();
    if q == 0 || g == 0 {
        return Err(Error::Parameter("empty similarity matrix".into()));
    }
    if truth.len() != q {
        return Err(Error::Parameter(format!(
            "{} truth sets for {q} queries",
            truth.len()
        )));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("non-finite similarity".into()));
    }
    for (i, t) in truth.iter().enumerate() {
        if t.is_empty() {
            return Err(Error::Parameter(format!("query {i} has an empty truth set")));
        }
        if let Some(&j) = t.iter().next_back() {
            if j >= g {
                return Err(Error::Parameter(format!(
                    "query {i} truth index {j} outside gallery of {g}"
                )));
            }
        }
    }
    Ok(())
}

/// Gallery indices of the top `k` similarities for one query row,
/// descending, ties by lower index.
pub fn top_k_indices(row: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Fraction of queries whose top-k retrieved set intersects the truth set.
pub fn retrieval_recall_at_k(
    s: &Array2<f64>,
    truth: &[BTreeSet<usize>],
    k: usize,
) -> Result<f64> {
    validate_similarity(s, truth)?;
    let (q, g) = s.dim();
    if k == 0 || k > g {
        return Err(Error::Parameter(format!("k = {k} outside [1, {g}]")));
    }
    let mut hits = 0;
    for (i, t) in truth.iter().enumerate() {
        let row: Vec<f64> = s.row(i).to_vec();
        if top_k_indices(&row, k).iter().any(|j| t.contains(j)) {
            hits += 1;
        }
    }
    Ok(hits as f64 / q as f64)
}

/// Full R@K report over one similarity matrix.
pub fn recall_report(
    task: &str,
    s: &Array2<f64>,
    truth: &[BTreeSet<usize>],
    k_values: &[usize],
    excluded_queries: usize,
) -> Result<RetrievalReport> {
    if k_values.is_empty() {
        return Err(Error::Parameter("no k values requested".into()));
    }
    let mut metrics = BTreeMap::new();
    for &k in k_values {
        metrics.insert(format!("R@{k}"), retrieval_recall_at_k(s, truth, k)?);
    }
    Ok(RetrievalReport {
        task: task.to_string(),
        metrics,
        n_queries: s.nrows(),
        k_values: k_values.to_vec(),
        excluded_queries,
    })
}

/// I2T and T2I retrieval where row i of each embedding matrix is one pair:
/// the truth for query i is gallery item i.
pub fn paired_retrieval(
    image_embeds: &Array2<f64>,
    text_embeds: &Array2<f64>,
    k_values: &[usize],
) -> Result<(RetrievalReport, RetrievalReport)> {
    if image_embeds.dim() != text_embeds.dim() {
        return Err(Error::Parameter(format!(
            "embedding shapes differ: {:?} vs {:?}",
            image_embeds.dim(),
            text_embeds.dim()
        )));
    }
    let n = image_embeds.nrows();
    let truth: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
    let s = image_embeds.dot(&text_embeds.t());
    let i2t = recall_report("i2t", &s, &truth, k_values, 0)?;
    let t2i = recall_report("t2i", &s.t().to_owned(), &truth, k_values, 0)?;
    Ok((i2t, t2i))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Images that contributed (non-empty truth sets).
    pub n_images: usize,
}

/// Micro-averaged precision, recall and F1 over predicted phenotype sets.
/// Images with empty truth sets are excluded with a warning.
pub fn matching_metrics(
    pred: &[BTreeSet<usize>],
    truth: &[BTreeSet<usize>],
    warnings: &mut Vec<String>,
) -> Result<MatchingMetrics> {
    if pred.len() != truth.len() {
        return Err(Error::Parameter(format!(
            "{} predictions for {} truth sets",
            pred.len(),
            truth.len()
        )));
    }
    let mut inter = 0usize;
    let mut pred_total = 0usize;
    let mut truth_total = 0usize;
    let mut used = 0usize;
    for (i, (p, t)) in pred.iter().zip(truth).enumerate() {
        if t.is_empty() {
            warnings.push(format!("image {i} has no ground-truth phenotypes, excluded"));
            continue;
        }
        inter += p.intersection(t).count();
        pred_total += p.len();
        truth_total += t.len();
        used += 1;
    }
    if used == 0 {
        return Err(Error::Parameter("no image with a non-empty truth set".into()));
    }
    let precision = if pred_total == 0 { 0.0 } else { inter as f64 / pred_total as f64 };
    let recall = if truth_total == 0 { 0.0 } else { inter as f64 / truth_total as f64 };
    let f1 =
        if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(MatchingMetrics { precision, recall, f1, n_images: used })
}

/// Top-K prediction sets from a similarity matrix, one K per query. The
/// usual choice is K_i = |truth_i|.
pub fn predict_topk_sets(s: &Array2<f64>, k_per_query: &[usize]) -> Result<Vec<BTreeSet<usize>>> {
    let (q, g) = s.dim();
    if k_per_query.len() != q {
        return Err(Error::Parameter(format!("{} k values for {q} queries", k_per_query.len())));
    }
    if let Some(&k) = k_per_query.iter().find(|&&k| k > g) {
        return Err(Error::Parameter(format!("k = {k} exceeds gallery of {g}")));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("non-finite similarity".into()));
    }
    Ok((0..q)
        .map(|i| {
            let row: Vec<f64> = s.row(i).to_vec();
            top_k_indices(&row, k_per_query[i]).into_iter().collect()
        })
        .collect())
}
