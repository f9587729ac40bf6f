//! Training-triplet generation with an automated consistency filter.
//!
//! For each sampled `(page image, target score s)` a generation oracle writes
//! a question meant to have relevance `s` to the page. The question is then
//! judged against the same page by a scoring oracle, giving `s'`; the triplet
//! is kept only when `|s - s'| <= 1`. Kept triplets are exported for manual
//! review and fine-tuning.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{read_jsonl, to_jsonl, write_atomic};
use crate::oracle::{
    GenOracle, GenRequest, LogicalOracle, LogicalScore, OracleError, OracleRequest, PageRef,
};

/// Largest allowed gap between target and predicted score for a kept triplet.
pub const SCORE_TOLERANCE: u8 = 1;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("image pool is empty")]
    EmptyPool,
    #[error("n_samples must be at least 1")]
    NoSamples,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSampling {
    /// Each target score drawn independently and uniformly from 1..=5.
    #[default]
    Uniform,
    /// Target scores cycle 1, 2, 3, 4, 5, 1, ..
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatagenConfig {
    pub n_samples: usize,
    pub sampling: ScoreSampling,
    pub seed: u64,
    /// Candidate focus hints; an empty pool means no focus.
    pub focus_pool: Vec<Option<String>>,
    pub image_pool: Vec<String>,
    /// Extra attempts per oracle call after the first failure.
    pub max_retries: u32,
    /// Items processed in parallel.
    pub concurrency: usize,
}

impl DatagenConfig {
    pub fn new(image_pool: Vec<String>, n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples,
            sampling: ScoreSampling::Uniform,
            seed,
            focus_pool: Vec::new(),
            image_pool,
            max_retries: 2,
            concurrency: 1,
        }
    }
}

/// A sampled generation target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetItem {
    pub index: usize,
    pub image_ref: String,
    pub target_score: LogicalScore,
    pub focus: Option<String>,
}

/// Draws `(image, target score, focus)` items. Deterministic for a fixed seed.
pub fn sample_targets(cfg: &DatagenConfig) -> Result<Vec<TargetItem>, DatagenError> {
    if cfg.image_pool.is_empty() {
        return Err(DatagenError::EmptyPool);
    }
    if cfg.n_samples == 0 {
        return Err(DatagenError::NoSamples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let items = (0..cfg.n_samples)
        .map(|index| {
            let score = match cfg.sampling {
                ScoreSampling::Uniform => rng.random_range(1..=5),
                ScoreSampling::RoundRobin => (index % 5) as i64 + 1,
            };
            let image_ref = cfg
                .image_pool
                .choose(&mut rng)
                .expect("pool checked non-empty")
                .clone();
            let focus = cfg.focus_pool.choose(&mut rng).cloned().flatten();
            TargetItem {
                index,
                image_ref,
                target_score: LogicalScore::new(score).expect("score drawn from 1..=5"),
                focus,
            }
        })
        .collect();
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub question: String,
    pub image_ref: String,
    pub target_score: LogicalScore,
    pub predicted_score: LogicalScore,
    pub retained: bool,
    pub answer: String,
}

/// Whether a generated question's judged score is close enough to its target.
pub fn passes_filter(target: LogicalScore, predicted: LogicalScore) -> bool {
    target.value().abs_diff(predicted.value()) <= SCORE_TOLERANCE
}

/// An item dropped because an oracle kept failing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FailedItem {
    pub index: usize,
    pub image_ref: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ScoreCounts {
    pub generated: usize,
    pub retained: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DatagenOutcome {
    /// All judged triplets in input order, kept or not.
    pub triplets: Vec<Triplet>,
    pub failed: Vec<FailedItem>,
}

impl DatagenOutcome {
    pub fn retained(&self) -> impl Iterator<Item = &Triplet> {
        self.triplets.iter().filter(|t| t.retained)
    }

    /// Generated and kept counts keyed by target score.
    pub fn per_score(&self) -> BTreeMap<u8, ScoreCounts> {
        let mut out: BTreeMap<u8, ScoreCounts> = LogicalScore::all()
            .map(|s| (s.value(), ScoreCounts::default()))
            .collect();
        for t in &self.triplets {
            let c = out.entry(t.target_score.value()).or_default();
            c.generated += 1;
            c.retained += usize::from(t.retained);
        }
        out
    }
}

fn with_retries<T>(
    retries: u32,
    mut call: impl FnMut() -> Result<T, OracleError>,
) -> Result<T, OracleError> {
    let mut attempt = 0;
    loop {
        match call() {
            Ok(v) => return Ok(v),
            Err(e) if attempt >= retries => return Err(e),
            Err(e) => {
                log::debug!("oracle call failed (attempt {}): {e}", attempt + 1);
                attempt += 1;
            }
        }
    }
}

fn process_item<G, S>(
    item: &TargetItem,
    gen: &G,
    scorer: &S,
    retries: u32,
) -> Result<Triplet, FailedItem>
where
    G: GenOracle + ?Sized,
    S: LogicalOracle + ?Sized,
{
    let fail = |stage: &str, e: OracleError| FailedItem {
        index: item.index,
        image_ref: item.image_ref.clone(),
        reason: format!("{stage}: {e}"),
    };
    let request = GenRequest {
        image_ref: item.image_ref.clone(),
        target_score: item.target_score,
        focus: item.focus.clone(),
    };
    let generated =
        with_retries(retries, || gen.generate(&request)).map_err(|e| fail("generate", e))?;
    let judge = OracleRequest {
        query_id: format!("datagen-{}", item.index),
        query_text: generated.query.clone(),
        page: PageRef {
            doc_id: "datagen".into(),
            page_id: item.index,
            image_ref: item.image_ref.clone(),
        },
    };
    let predicted = with_retries(retries, || scorer.score(&judge)).map_err(|e| fail("score", e))?;
    Ok(Triplet {
        question: generated.query,
        image_ref: item.image_ref.clone(),
        target_score: item.target_score,
        predicted_score: predicted,
        retained: passes_filter(item.target_score, predicted),
        answer: generated.answer,
    })
}

/// Generates a question per item, judges it, and flags it kept or dropped.
///
/// Items whose oracle calls fail after `max_retries` retries are reported in
/// [`DatagenOutcome::failed`] and never appear as triplets. Output order
/// follows input order regardless of `concurrency`.
pub fn generate_and_check<G, S>(
    items: &[TargetItem],
    gen: &G,
    scorer: &S,
    cfg: &DatagenConfig,
) -> Result<DatagenOutcome, DatagenError>
where
    G: GenOracle + ?Sized,
    S: LogicalOracle + ?Sized,
{
    let results: Vec<Result<Triplet, FailedItem>> = if cfg.concurrency > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.concurrency)
            .build()
            .map_err(|e| DatagenError::ThreadPool(e.to_string()))?;
        pool.install(|| {
            items
                .par_iter()
                .map(|item| process_item(item, gen, scorer, cfg.max_retries))
                .collect()
        })
    } else {
        items
            .iter()
            .map(|item| process_item(item, gen, scorer, cfg.max_retries))
            .collect()
    };
    let mut outcome = DatagenOutcome::default();
    for r in results {
        match r {
            Ok(t) => outcome.triplets.push(t),
            Err(f) => {
                log::warn!("dropping item {} ({}): {}", f.index, f.image_ref, f.reason);
                outcome.failed.push(f);
            }
        }
    }
    Ok(outcome)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatagenError + '_ {
    move |source| DatagenError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes triplets as JSONL and returns how many were written.
pub fn export_triplets(
    triplets: &[Triplet],
    path: &Path,
    retained_only: bool,
) -> Result<usize, DatagenError> {
    let selected: Vec<&Triplet> = triplets
        .iter()
        .filter(|t| !retained_only || t.retained)
        .collect();
    write_atomic(path, &to_jsonl(&selected)).map_err(io_err(path))?;
    Ok(selected.len())
}

pub fn load_triplets(path: &Path) -> Result<Vec<Triplet>, DatagenError> {
    read_jsonl(path).map_err(io_err(path))
}

/// Writes kept triplets as a CSV for manual review.
pub fn export_review_csv(triplets: &[Triplet], path: &Path) -> Result<usize, DatagenError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "question",
        "image_ref",
        "target_score",
        "predicted_score",
        "answer",
    ])?;
    let mut count = 0;
    for t in triplets.iter().filter(|t| t.retained) {
        w.write_record([
            t.question.as_str(),
            t.image_ref.as_str(),
            &t.target_score.to_string(),
            &t.predicted_score.to_string(),
            t.answer.as_str(),
        ])?;
        count += 1;
    }
    let bytes = w.into_inner().map_err(|e| DatagenError::Io {
        path: path.display().to_string(),
        source: e.into_error(),
    })?;
    write_atomic(path, &bytes).map_err(io_err(path))?;
    Ok(count)
}
