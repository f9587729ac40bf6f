//! Logic-aware graph traversal over a page graph.
//!
//! The traversal seeds an exploration set with the `w` pages of highest
//! semantic score, asks a [`LogicalOracle`] to judge each page it visits,
//! and repeatedly expands to the unvisited neighbors of the exploration set,
//! keeping only the `w` best candidates as the next frontier. Every visited
//! page is finally re-ranked by its combined semantic + logical score.
//!
//! Three ablation modes share the same scoring path:
//!
//! * [`Mode::LogiOnly`] traverses identically but ranks by the logical score alone;
//! * [`Mode::Full`] skips the graph and judges every page of the document;
//! * [`Mode::SemanticOnly`] never calls the oracle and ranks by semantic score.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{query_page_score, EmbeddingError, EmbeddingStore, QueryEmbedding};
use crate::graph::{GraphError, PageGraph};
use crate::oracle::{LogicalOracle, LogicalScore, OracleError, OracleRequest, PageRef};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid traversal config: {0}")]
    InvalidConfig(String),
    #[error("graph covers {graph} pages but the store has {store}")]
    GraphStoreMismatch { graph: usize, store: usize },
    #[error("oracle failed on page {page_id}: {source}")]
    Oracle {
        page_id: usize,
        #[source]
        source: OracleError,
        /// Telemetry of the run up to the failure.
        partial: Box<RetrievalRun>,
    },
    #[error("K = {k} exceeds document size {n_pages}")]
    KExceedsDocument { k: usize, n_pages: usize },
    #[error("K must be at least 1")]
    ZeroK,
}

/// Traversal strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Graph traversal ranked by combined semantic + logical relevance.
    #[default]
    Molorag,
    /// Graph traversal ranked by logical relevance only.
    LogiOnly,
    /// Every page judged, ranked by combined relevance.
    Full,
    /// No oracle; every page ranked by semantic relevance.
    SemanticOnly,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::Molorag,
        Mode::LogiOnly,
        Mode::Full,
        Mode::SemanticOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Molorag => "molorag",
            Mode::LogiOnly => "logi_only",
            Mode::Full => "full",
            Mode::SemanticOnly => "semantic_only",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown mode {s:?}; expected one of molorag, logi_only, full, semantic_only"
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraversalConfig {
    /// Exploration set size.
    pub w: usize,
    /// Maximum number of frontier expansions.
    pub n_hop: usize,
    pub mode: Mode,
    /// Weight on the normalized semantic score; the logical score gets the rest.
    pub combine_weight: f64,
    /// Judge the pages of one frontier in parallel. Results are merged in page order.
    pub concurrent_scoring: bool,
}

impl Default for TraversalConfig {
    fn default() -> Self {
        Self {
            w: 3,
            n_hop: 4,
            mode: Mode::Molorag,
            combine_weight: 0.5,
            concurrent_scoring: false,
        }
    }
}

impl TraversalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.w == 0 {
            return Err(RetrievalError::InvalidConfig("w must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.combine_weight) {
            return Err(RetrievalError::InvalidConfig(format!(
                "combine_weight {} outside [0, 1]",
                self.combine_weight
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPage {
    pub page_id: usize,
    pub s_sem: f64,
    pub s_sem_norm: f64,
    pub s_logi: Option<LogicalScore>,
    pub s: f64,
    /// Hop at which the page entered the visited set (0 for the seed pages).
    pub hop_discovered: usize,
}

/// The re-ranked output of one traversal plus its telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRun {
    pub query_id: String,
    pub doc_id: String,
    pub mode: Mode,
    pub n_pages: usize,
    /// Visited pages, descending by `s`, ties by ascending page id.
    pub visited: Vec<ScoredPage>,
    /// Number of oracle judgments issued.
    pub queried_pages: usize,
    pub hops_used: usize,
    /// All page ids by descending semantic score; used to fill short top-K lists.
    pub semantic_order: Vec<usize>,
}

impl RetrievalRun {
    pub fn queried_fraction(&self) -> f64 {
        if self.n_pages == 0 {
            0.0
        } else {
            self.queried_pages as f64 / self.n_pages as f64
        }
    }

    pub fn visited_ids(&self) -> Vec<usize> {
        self.visited.iter().map(|p| p.page_id).collect()
    }

    /// Top-K page ids, filled from the semantic ranking when fewer than K were visited.
    pub fn topk(&self, k: usize) -> Result<Vec<usize>, RetrievalError> {
        topk(self, k, &self.semantic_order)
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("run serialization is infallible");
        out.push(b'\n');
        out
    }
}

/// Descending score, ascending page id.
fn rank_order(a: (usize, f64), b: (usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Scores every page against the query; descending, ties by ascending page id.
pub fn semantic_rank(
    q: &QueryEmbedding,
    store: &EmbeddingStore,
) -> Result<Vec<(usize, f64)>, EmbeddingError> {
    let mut scored = store
        .pages()
        .iter()
        .map(|p| Ok((p.page_id, query_page_score(q, p)?)))
        .collect::<Result<Vec<_>, EmbeddingError>>()?;
    scored.sort_by(|&a, &b| rank_order(a, b));
    Ok(scored)
}

/// Min-max normalization onto [0, 1]; a constant input maps to 0.5 everywhere.
pub fn normalize_semantic(scores: &[f64]) -> Vec<f64> {
    let (min, max) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
            (lo.min(s), hi.max(s))
        });
    let span = max - min;
    if span.is_nan() || span <= 0.0 {
        return vec![0.5; scores.len()];
    }
    scores.iter().map(|&s| (s - min) / span).collect()
}

/// Weighted average of a normalized semantic score and a 1-5 logical score
/// mapped onto [0, 1].
pub fn combine(s_sem_norm: f64, s_logi: LogicalScore, weight: f64) -> f64 {
    weight * s_sem_norm + (1.0 - weight) * s_logi.unit()
}

/// Issues oracle calls for one query, at most once per page.
struct Judge<'a, O: ?Sized> {
    oracle: &'a O,
    query_id: &'a str,
    query_text: &'a str,
    doc_id: &'a str,
    concurrent: bool,
    memo: BTreeMap<usize, LogicalScore>,
}

impl<O: LogicalOracle + ?Sized> Judge<'_, O> {
    fn request(&self, page_id: usize) -> OracleRequest {
        OracleRequest {
            query_id: self.query_id.to_string(),
            query_text: self.query_text.to_string(),
            page: PageRef::new(self.doc_id, page_id),
        }
    }

    /// Judges `pages` (ascending, not yet judged). On failure, judgments of
    /// the pages before the failing one are kept.
    fn judge(&mut self, pages: &[usize]) -> Result<(), (usize, OracleError)> {
        let pending: Vec<usize> = pages
            .iter()
            .copied()
            .filter(|p| !self.memo.contains_key(p))
            .collect();
        let results: Vec<Result<LogicalScore, OracleError>> = if self.concurrent {
            pending
                .par_iter()
                .map(|&p| self.oracle.score(&self.request(p)))
                .collect()
        } else {
            let mut out = Vec::with_capacity(pending.len());
            for &p in &pending {
                let r = self.oracle.score(&self.request(p));
                let failed = r.is_err();
                out.push(r);
                if failed {
                    break;
                }
            }
            out
        };
        for (page, result) in pending.into_iter().zip(results) {
            match result {
                Ok(score) => {
                    self.memo.insert(page, score);
                }
                Err(e) => return Err((page, e)),
            }
        }
        Ok(())
    }
}

struct RunBuilder {
    run: RetrievalRun,
    s_sem: Vec<f64>,
    s_norm: Vec<f64>,
    mode: Mode,
    weight: f64,
}

impl RunBuilder {
    fn visit(&mut self, page_id: usize, s_logi: Option<LogicalScore>, hop: usize) -> f64 {
        let s_sem_norm = self.s_norm[page_id];
        let s = match (self.mode, s_logi) {
            (Mode::LogiOnly, Some(l)) => l.unit(),
            (_, Some(l)) => combine(s_sem_norm, l, self.weight),
            (_, None) => s_sem_norm,
        };
        self.run.visited.push(ScoredPage {
            page_id,
            s_sem: self.s_sem[page_id],
            s_sem_norm,
            s_logi,
            s,
            hop_discovered: hop,
        });
        s
    }

    fn finish(mut self, queried_pages: usize) -> RetrievalRun {
        self.run.queried_pages = queried_pages;
        self.run
            .visited
            .sort_by(|a, b| rank_order((a.page_id, a.s), (b.page_id, b.s)));
        self.run
    }
}

/// Runs one retrieval for `q` over a document.
///
/// `query_text` is forwarded to the oracle; the embedding drives the
/// semantic side. Oracle failures abort the run and carry the partial run.
pub fn traverse<O: LogicalOracle + ?Sized>(
    q: &QueryEmbedding,
    query_text: &str,
    store: &EmbeddingStore,
    graph: &PageGraph,
    oracle: &O,
    cfg: &TraversalConfig,
) -> Result<RetrievalRun, RetrievalError> {
    cfg.validate()?;
    if graph.n_pages() != store.len() {
        return Err(RetrievalError::GraphStoreMismatch {
            graph: graph.n_pages(),
            store: store.len(),
        });
    }
    let ranked = semantic_rank(q, store)?;
    let mut s_sem = vec![0.0; store.len()];
    for &(id, s) in &ranked {
        s_sem[id] = s;
    }
    let s_norm = normalize_semantic(&s_sem);
    let mut b = RunBuilder {
        run: RetrievalRun {
            query_id: q.query_id.clone(),
            doc_id: store.doc_id().to_string(),
            mode: cfg.mode,
            n_pages: store.len(),
            visited: Vec::new(),
            queried_pages: 0,
            hops_used: 0,
            semantic_order: ranked.iter().map(|&(id, _)| id).collect(),
        },
        s_sem,
        s_norm,
        mode: cfg.mode,
        weight: cfg.combine_weight,
    };
    let mut judge = Judge {
        oracle,
        query_id: &q.query_id,
        query_text,
        doc_id: store.doc_id(),
        concurrent: cfg.concurrent_scoring,
        memo: BTreeMap::new(),
    };

    // Judges `pages`, records them at `hop`, and returns their final scores.
    // On oracle failure the already-judged pages are recorded before bailing.
    macro_rules! judge_and_visit {
        ($pages:expr, $hop:expr) => {{
            let pages: &[usize] = $pages;
            let outcome = judge.judge(pages);
            let mut scores = Vec::with_capacity(pages.len());
            for &p in pages {
                match judge.memo.get(&p) {
                    Some(&l) => scores.push((p, b.visit(p, Some(l), $hop))),
                    None => break,
                }
            }
            if let Err((page_id, source)) = outcome {
                let queried = judge.memo.len();
                return Err(RetrievalError::Oracle {
                    page_id,
                    source,
                    partial: Box::new(b.finish(queried)),
                });
            }
            scores
        }};
    }

    match cfg.mode {
        Mode::SemanticOnly => {
            for id in 0..store.len() {
                b.visit(id, None, 0);
            }
        }
        Mode::Full => {
            let all: Vec<usize> = (0..store.len()).collect();
            judge_and_visit!(&all, 0);
        }
        Mode::Molorag | Mode::LogiOnly => {
            let mut frontier: Vec<usize> =
                b.run.semantic_order.iter().copied().take(cfg.w).collect();
            frontier.sort_unstable();
            let mut visited: HashSet<usize> = frontier.iter().copied().collect();
            judge_and_visit!(&frontier, 0);
            for hop in 1..=cfg.n_hop {
                let mut candidates = BTreeSet::new();
                for &p in &frontier {
                    for &n in graph.neighbors(p)? {
                        if !visited.contains(&n) {
                            candidates.insert(n);
                        }
                    }
                }
                if candidates.is_empty() {
                    break;
                }
                let candidates: Vec<usize> = candidates.into_iter().collect();
                visited.extend(candidates.iter().copied());
                let mut scored = judge_and_visit!(&candidates, hop);
                b.run.hops_used = hop;
                scored.sort_by(|&x, &y| rank_order(x, y));
                frontier = scored.into_iter().take(cfg.w).map(|(id, _)| id).collect();
                frontier.sort_unstable();
            }
        }
    }
    let queried = judge.memo.len();
    Ok(b.finish(queried))
}

/// First `k` visited pages, topped up from `fallback` (a semantic ranking)
/// with pages not already selected.
pub fn topk(
    run: &RetrievalRun,
    k: usize,
    fallback: &[usize],
) -> Result<Vec<usize>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if k > run.n_pages {
        return Err(RetrievalError::KExceedsDocument {
            k,
            n_pages: run.n_pages,
        });
    }
    let mut out: Vec<usize> = run.visited.iter().take(k).map(|p| p.page_id).collect();
    let mut taken: HashSet<usize> = out.iter().copied().collect();
    for &p in fallback {
        if out.len() == k {
            break;
        }
        if taken.insert(p) {
            out.push(p);
        }
    }
    Ok(out)
}
