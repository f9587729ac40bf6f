//! Retrieval metrics over binary page relevance.
//!
//! For a sample with `n` evidence pages and a retrieved list `r_1, r_2, ..`:
//!
//! ```text
//! Recall@K    = sum_{i<=K} 1[r_i in gt] / n
//! Precision@K = sum_{i<=K} 1[r_i in gt] / K
//! DCG@K       = sum_{i<=min(n,K)} 1[r_i in gt] / log2(i + 1)
//! IDCG@K      = sum_{i<=min(n,K)} 1 / log2(i + 1)
//! NDCG@K      = DCG@K / IDCG@K
//! MRR@K       = 1 / (position of the first relevant page within K), else 0
//! ```
//!
//! The DCG sum is cut at `min(n, K)`, so relevant pages ranked between `n`
//! and `K` earn nothing. [`NdcgVariant::Standard`] sums DCG over all `K`
//! positions instead, for comparison with conventional NDCG.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::read_jsonl;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("sample {0:?} has no evidence pages")]
    EmptyGroundTruth(String),
    #[error("no retrieval run for query {0:?}")]
    MissingRun(String),
    #[error("retrieved list for {query_id:?} repeats page {page_id}")]
    DuplicateRetrieved { query_id: String, page_id: usize },
    #[error("K must be at least 1")]
    ZeroK,
    #[error("duplicate sample for query {0:?}")]
    DuplicateSample(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
}

/// One evaluation question with its ground-truth evidence pages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSample {
    pub query_id: String,
    pub doc_id: String,
    pub question: String,
    pub evidence_pages: BTreeSet<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

/// Loads an evaluation dataset from JSONL.
pub fn load_dataset(path: &Path) -> Result<Vec<EvalSample>, MetricsError> {
    let samples: Vec<EvalSample> = read_jsonl(path)
        .map_err(|e| MetricsError::InvalidDataset(format!("{}: {e}", path.display())))?;
    if let Some(s) = samples.iter().find(|s| s.evidence_pages.is_empty()) {
        return Err(MetricsError::EmptyGroundTruth(s.query_id.clone()));
    }
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NdcgVariant {
    /// DCG and IDCG both summed to `min(n, K)`.
    #[default]
    Truncated,
    /// DCG summed over all `K` positions, IDCG to `min(n, K)`.
    Standard,
}

fn hits(retrieved: &[usize], gt: &BTreeSet<usize>, k: usize) -> usize {
    retrieved.iter().take(k).filter(|p| gt.contains(p)).count()
}

fn check(gt: &BTreeSet<usize>, k: usize) -> Result<(), MetricsError> {
    if gt.is_empty() {
        return Err(MetricsError::EmptyGroundTruth(String::new()));
    }
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    Ok(())
}

pub fn recall_at_k(
    retrieved: &[usize],
    gt: &BTreeSet<usize>,
    k: usize,
) -> Result<f64, MetricsError> {
    check(gt, k)?;
    Ok(hits(retrieved, gt, k) as f64 / gt.len() as f64)
}

pub fn precision_at_k(
    retrieved: &[usize],
    gt: &BTreeSet<usize>,
    k: usize,
) -> Result<f64, MetricsError> {
    check(gt, k)?;
    Ok(hits(retrieved, gt, k) as f64 / k as f64)
}

fn discount(position: usize) -> f64 {
    1.0 / ((position + 1) as f64).log2()
}

pub fn ndcg_at_k(
    retrieved: &[usize],
    gt: &BTreeSet<usize>,
    k: usize,
    variant: NdcgVariant,
) -> Result<f64, MetricsError> {
    check(gt, k)?;
    let ideal_len = gt.len().min(k);
    let dcg_len = match variant {
        NdcgVariant::Truncated => ideal_len,
        NdcgVariant::Standard => k,
    };
    let dcg: f64 = retrieved
        .iter()
        .take(dcg_len)
        .enumerate()
        .filter(|(_, p)| gt.contains(p))
        .map(|(i, _)| discount(i + 1))
        // an empty f64 sum is -0.0
        .fold(0.0, |acc, g| acc + g);
    let idcg: f64 = (1..=ideal_len).map(discount).sum();
    Ok(dcg / idcg)
}

pub fn mrr_at_k(retrieved: &[usize], gt: &BTreeSet<usize>, k: usize) -> Result<f64, MetricsError> {
    check(gt, k)?;
    Ok(retrieved
        .iter()
        .take(k)
        .position(|p| gt.contains(p))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64))
}

/// The four metrics at one cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    pub recall: f64,
    pub precision: f64,
    pub ndcg: f64,
    pub mrr: f64,
}

impl MetricSet {
    pub fn compute(
        retrieved: &[usize],
        gt: &BTreeSet<usize>,
        k: usize,
        variant: NdcgVariant,
    ) -> Result<Self, MetricsError> {
        Ok(Self {
            recall: recall_at_k(retrieved, gt, k)?,
            precision: precision_at_k(retrieved, gt, k)?,
            ndcg: ndcg_at_k(retrieved, gt, k, variant)?,
            mrr: mrr_at_k(retrieved, gt, k)?,
        })
    }
}

/// A query's retrieved page list, ranked, long enough for the largest K.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievedList {
    pub query_id: String,
    pub pages: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub query_id: String,
    /// Keyed by K.
    pub at: BTreeMap<usize, MetricSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub sample_count: usize,
    pub ndcg_variant: NdcgVariant,
    /// Mean metrics keyed by K.
    pub mean: BTreeMap<usize, MetricSet>,
    pub samples: Vec<SampleReport>,
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Scores every sample at every K and averages over samples.
///
/// Samples are joined to retrieved lists on `query_id`; a sample without a
/// list is an error, while lists without a sample are ignored.
pub fn evaluate(
    retrieved: &[RetrievedList],
    samples: &[EvalSample],
    ks: &[usize],
    variant: NdcgVariant,
) -> Result<MetricReport, MetricsError> {
    if ks.contains(&0) {
        return Err(MetricsError::ZeroK);
    }
    let by_query: HashMap<&str, &RetrievedList> =
        retrieved.iter().map(|r| (r.query_id.as_str(), r)).collect();
    let mut seen_samples = HashSet::new();
    let mut reports = Vec::with_capacity(samples.len());
    for sample in samples {
        if !seen_samples.insert(sample.query_id.as_str()) {
            return Err(MetricsError::DuplicateSample(sample.query_id.clone()));
        }
        if sample.evidence_pages.is_empty() {
            return Err(MetricsError::EmptyGroundTruth(sample.query_id.clone()));
        }
        let list = by_query
            .get(sample.query_id.as_str())
            .ok_or_else(|| MetricsError::MissingRun(sample.query_id.clone()))?;
        let mut seen = HashSet::new();
        if let Some(&dup) = list.pages.iter().find(|p| !seen.insert(**p)) {
            return Err(MetricsError::DuplicateRetrieved {
                query_id: sample.query_id.clone(),
                page_id: dup,
            });
        }
        let at = ks
            .iter()
            .map(|&k| {
                Ok((
                    k,
                    MetricSet::compute(&list.pages, &sample.evidence_pages, k, variant)?,
                ))
            })
            .collect::<Result<_, MetricsError>>()?;
        reports.push(SampleReport {
            query_id: sample.query_id.clone(),
            at,
        });
    }
    let n = reports.len() as f64;
    let mean = ks
        .iter()
        .map(|&k| {
            let column = |f: fn(&MetricSet) -> f64| {
                if reports.is_empty() {
                    0.0
                } else {
                    compensated_sum(reports.iter().map(|r| f(&r.at[&k]))) / n
                }
            };
            (
                k,
                MetricSet {
                    recall: column(|m| m.recall),
                    precision: column(|m| m.precision),
                    ndcg: column(|m| m.ndcg),
                    mrr: column(|m| m.mrr),
                },
            )
        })
        .collect();
    Ok(MetricReport {
        sample_count: reports.len(),
        ndcg_variant: variant,
        mean,
        samples: reports,
    })
}

impl MetricReport {
    /// Aligned text table of the mean metrics, one row per K.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>4}  {:>9}  {:>9}  {:>9}  {:>9}",
            "K", "Recall", "Precision", "NDCG", "MRR"
        );
        for (k, m) in &self.mean {
            let _ = writeln!(
                out,
                "{:>4}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}",
                k, m.recall, m.precision, m.ndcg, m.mrr
            );
        }
        let _ = writeln!(
            out,
            "samples: {}  ndcg: {}",
            self.sample_count,
            match self.ndcg_variant {
                NdcgVariant::Truncated => "truncated",
                NdcgVariant::Standard => "standard",
            }
        );
        out
    }
}
