//! Synthetic documents with planted structure.
//!
//! [`synth`] realizes a requested page-graph topology geometrically: it
//! builds a Gram matrix whose entries sit clearly above the similarity
//! threshold on the requested edges and clearly below it elsewhere, factors
//! it into base vectors, and then emits each page as a few noisy copies of its
//! base vector. Building the graph from those embeddings reproduces the
//! requested topology, which [`synth`] verifies before returning.
//!
//! Given adjacency `A` with smallest eigenvalue `-s0`, the Gram matrix is
//! `(A + sI + cJ) / (s + c)` with `s = max(s0, 1)`; `c >= 0` centres the gap
//! between edge value `(1 + c) / (s + c)` and non-edge value `c / (s + c)`
//! on `theta` when a plain `(A + sI) / s` would not clear it.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{
    encode_queries, EmbeddingError, EmbeddingStore, Format, MultiVector, QueryEmbedding,
};
use crate::graph::{build_graph, GraphError, PageGraph};
use crate::io::{to_jsonl, write_atomic};
use crate::metrics::EvalSample;
use crate::oracle::{FixtureEntry, LogicalScore};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("infeasible topology: {0}")]
    InfeasibleTopology(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    /// `0 - 1 - .. - (n-1)`.
    Path,
    /// A path closed into a cycle.
    Ring,
    /// Disjoint cliques of the given sizes, which must sum to `n_pages`.
    Clusters { sizes: Vec<usize> },
    /// Each pair joined independently with probability `p`.
    Random { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedQuery {
    #[serde(default)]
    pub query_id: Option<String>,
    pub evidence_pages: BTreeSet<usize>,
    /// Pages the query embedding is built from; they top the semantic ranking.
    pub semantic_peak_pages: Vec<usize>,
    /// Logical scores for specific pages; all other pages get `default_logical`.
    #[serde(default)]
    pub logical_scores: BTreeMap<usize, LogicalScore>,
    #[serde(default = "default_logical")]
    pub default_logical: LogicalScore,
}

fn default_logical() -> LogicalScore {
    LogicalScore::MIN
}

fn default_k_range() -> (usize, usize) {
    (1, 3)
}

fn default_theta() -> f64 {
    0.4
}

fn default_noise() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub doc_id: String,
    pub n_pages: usize,
    pub d: usize,
    /// Inclusive range of token rows per page.
    #[serde(default = "default_k_range")]
    pub k_range: (usize, usize),
    pub topology: Topology,
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Token noise as a fraction of the Gram-matrix margin around theta.
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub queries: Vec<PlantedQuery>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(
        doc_id: impl Into<String>,
        n_pages: usize,
        d: usize,
        topology: Topology,
        seed: u64,
    ) -> Self {
        Self {
            doc_id: doc_id.into(),
            n_pages,
            d,
            k_range: default_k_range(),
            topology,
            theta: default_theta(),
            noise: default_noise(),
            queries: Vec::new(),
            seed,
        }
    }

    fn validate(&self) -> Result<(), FixtureError> {
        let bad = |m: String| Err(FixtureError::InvalidSpec(m));
        if self.n_pages == 0 || self.d == 0 {
            return bad("n_pages and d must be positive".into());
        }
        let (kmin, kmax) = self.k_range;
        if kmin == 0 || kmin > kmax {
            return bad(format!(
                "k_range {:?} must satisfy 1 <= min <= max",
                self.k_range
            ));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(FixtureError::InfeasibleTopology(format!(
                "theta {} must lie in (0, 1)",
                self.theta
            )));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return bad(format!("noise {} must lie in [0, 1)", self.noise));
        }
        match &self.topology {
            Topology::Clusters { sizes } if sizes.iter().sum::<usize>() != self.n_pages => {
                return bad(format!(
                    "cluster sizes {sizes:?} do not sum to {}",
                    self.n_pages
                ));
            }
            Topology::Random { p } if !(0.0..=1.0).contains(p) => {
                return bad(format!("edge probability {p} outside [0, 1]"));
            }
            _ => {}
        }
        for (i, q) in self.queries.iter().enumerate() {
            if q.evidence_pages.is_empty() {
                return bad(format!("query {i} has no evidence pages"));
            }
            if q.semantic_peak_pages.is_empty() {
                return bad(format!("query {i} has no semantic peak pages"));
            }
            let pages = q
                .evidence_pages
                .iter()
                .chain(&q.semantic_peak_pages)
                .chain(q.logical_scores.keys());
            if let Some(p) = pages.into_iter().find(|&&p| p >= self.n_pages) {
                return bad(format!("query {i} references page {p} >= {}", self.n_pages));
            }
        }
        Ok(())
    }
}

/// In-memory artifacts of a synthetic document.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub store: EmbeddingStore,
    pub queries: Vec<QueryEmbedding>,
    pub fixture: Vec<FixtureEntry>,
    pub samples: Vec<EvalSample>,
    /// The graph built from `store` at the spec's theta; equals the requested topology.
    pub graph: PageGraph,
}

/// Paths written by [`SyntheticCorpus::write_to`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusPaths {
    pub embeddings: PathBuf,
    pub queries: PathBuf,
    pub fixture: PathBuf,
    pub dataset: PathBuf,
}

impl SyntheticCorpus {
    /// Writes `<doc_id>.mve`, `queries.json`, `fixture.jsonl`, and `eval.jsonl` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<CorpusPaths, FixtureError> {
        let paths = CorpusPaths {
            embeddings: dir.join(format!("{}.mve", self.store.doc_id())),
            queries: dir.join("queries.json"),
            fixture: dir.join("fixture.jsonl"),
            dataset: dir.join("eval.jsonl"),
        };
        let write = |path: &Path, bytes: &[u8]| {
            write_atomic(path, bytes).map_err(|source| FixtureError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        write(&paths.embeddings, &self.store.to_binary())?;
        write(
            &paths.queries,
            &encode_queries(self.store.doc_id(), &self.queries, Format::Json),
        )?;
        write(&paths.fixture, &to_jsonl(&self.fixture))?;
        write(&paths.dataset, &to_jsonl(&self.samples))?;
        Ok(paths)
    }
}

/// Adjacency matrix of the requested topology.
pub fn topology_edges(spec: &SyntheticSpec, rng: &mut impl Rng) -> BTreeSet<(usize, usize)> {
    let n = spec.n_pages;
    let mut edges = BTreeSet::new();
    match &spec.topology {
        Topology::Path => edges.extend((1..n).map(|i| (i - 1, i))),
        Topology::Ring => {
            edges.extend((1..n).map(|i| (i - 1, i)));
            if n > 2 {
                edges.insert((0, n - 1));
            }
        }
        Topology::Clusters { sizes } => {
            let mut start = 0;
            for &size in sizes {
                for i in start..start + size {
                    for j in i + 1..start + size {
                        edges.insert((i, j));
                    }
                }
                start += size;
            }
        }
        Topology::Random { p } => {
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random_bool(*p) {
                        edges.insert((i, j));
                    }
                }
            }
        }
    }
    edges
}

/// Unit base vectors (one per page) whose pairwise inner products realize
/// `edges` under `theta`, and the margin by which they clear it.
fn base_vectors(
    n: usize,
    d: usize,
    theta: f64,
    edges: &BTreeSet<(usize, usize)>,
) -> Result<(Vec<Vec<f64>>, f64), FixtureError> {
    let mut adj = DMatrix::<f64>::zeros(n, n);
    for &(i, j) in edges {
        adj[(i, j)] = 1.0;
        adj[(j, i)] = 1.0;
    }
    let lambda_min = SymmetricEigen::new(adj.clone()).eigenvalues.min();
    let shift = (-lambda_min).max(1.0);
    let offset = ((2.0 * theta * shift - 1.0) / (2.0 - 2.0 * theta)).max(0.0);
    let scale = shift + offset;
    let edge_value = (1.0 + offset) / scale;
    let gap_value = offset / scale;
    let margin = (edge_value - theta).min(theta - gap_value);
    if margin.is_nan() || margin <= 0.0 {
        return Err(FixtureError::InfeasibleTopology(format!(
            "no margin around theta {theta} (edge {edge_value}, non-edge {gap_value})"
        )));
    }

    let gram =
        (adj + DMatrix::identity(n, n) * shift + DMatrix::from_element(n, n, offset)) / scale;
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.max().max(1.0);
    let kept: Vec<usize> = (0..n)
        .filter(|&c| eig.eigenvalues[c] > 1e-9 * top)
        .collect();
    if kept.len() > d {
        return Err(FixtureError::InfeasibleTopology(format!(
            "topology needs rank {} but d = {d}",
            kept.len()
        )));
    }
    let vectors = (0..n)
        .map(|i| {
            let mut v = vec![0.0; d];
            for (slot, &c) in kept.iter().enumerate() {
                v[slot] = eig.eigenvectors[(i, c)] * eig.eigenvalues[c].sqrt();
            }
            v
        })
        .collect();
    Ok((vectors, margin))
}

fn noisy_copy(base: &[f64], eps: f64, rng: &mut impl Rng) -> Vec<f64> {
    let noise: Vec<f64> = (0..base.len())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let norm = noise.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    base.iter()
        .zip(&noise)
        .map(|(b, g)| b + eps * g / norm)
        .collect()
}

/// Generates a synthetic document and its planted queries.
pub fn synth(spec: &SyntheticSpec) -> Result<SyntheticCorpus, FixtureError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let edges = topology_edges(spec, &mut rng);
    let (bases, margin) = base_vectors(spec.n_pages, spec.d, spec.theta, &edges)?;
    let eps = spec.noise * margin;

    let (kmin, kmax) = spec.k_range;
    let pages = bases
        .iter()
        .map(|b| {
            let k = rng.random_range(kmin..=kmax);
            let rows: Vec<Vec<f64>> = (0..k).map(|_| noisy_copy(b, eps, &mut rng)).collect();
            MultiVector::from_rows(&rows)
        })
        .collect::<Result<Vec<_>, _>>()?;
    // round through the binary encoding so in-memory and on-disk stores agree
    let store = crate::embedding::store_from_bytes(
        &EmbeddingStore::new(spec.doc_id.clone(), pages)?.to_binary(),
        Format::Binary,
        &spec.doc_id,
    )?;

    let graph = build_graph(&store, spec.theta)?;
    let realized: BTreeSet<(usize, usize)> = graph.edge_scores().keys().copied().collect();
    if realized != edges {
        let missing = edges.difference(&realized).count();
        let extra = realized.difference(&edges).count();
        return Err(FixtureError::InfeasibleTopology(format!(
            "noise broke the topology ({missing} edges missing, {extra} extra); lower `noise`"
        )));
    }

    let mut queries = Vec::with_capacity(spec.queries.len());
    let mut fixture = Vec::new();
    let mut samples = Vec::with_capacity(spec.queries.len());
    for (i, planted) in spec.queries.iter().enumerate() {
        let query_id = planted.query_id.clone().unwrap_or_else(|| format!("q{i}"));
        let rows: Vec<Vec<f64>> = planted
            .semantic_peak_pages
            .iter()
            .map(|&p| noisy_copy(&bases[p], eps, &mut rng))
            .collect();
        queries.push(QueryEmbedding {
            query_id: query_id.clone(),
            vectors: MultiVector::from_rows(&rows)?,
        });
        fixture.extend((0..spec.n_pages).map(|page_id| {
            FixtureEntry {
                query_id: query_id.clone(),
                page_id,
                score: planted
                    .logical_scores
                    .get(&page_id)
                    .copied()
                    .unwrap_or(planted.default_logical),
            }
        }));
        samples.push(EvalSample {
            query_id: query_id.clone(),
            doc_id: spec.doc_id.clone(),
            question: format!("planted question {query_id}"),
            evidence_pages: planted.evidence_pages.clone(),
            answer: None,
        });
    }
    // same f32 rounding as the on-disk query file
    let queries = round_trip_queries(&spec.doc_id, queries)?;

    Ok(SyntheticCorpus {
        store,
        queries,
        fixture,
        samples,
        graph,
    })
}

fn round_trip_queries(
    doc_id: &str,
    queries: Vec<QueryEmbedding>,
) -> Result<Vec<QueryEmbedding>, FixtureError> {
    if queries.is_empty() {
        return Ok(queries);
    }
    let bytes = encode_queries(doc_id, &queries, Format::Binary);
    let reloaded = crate::embedding::store_from_bytes(&bytes, Format::Binary, doc_id)?;
    Ok(queries
        .into_iter()
        .zip(reloaded.pages())
        .map(|(q, p)| QueryEmbedding {
            query_id: q.query_id,
            vectors: p.vectors.clone(),
        })
        .collect())
}

/// Ring document with one planted query per entry of `n_queries`.
///
/// Each query's semantic peak is a single random page. Evidence pages (one or
/// two, logical score 5) lie within ring distance 5 of the peak, so at most
/// four hops from the peak and its two neighbors. With `adversarial` set, the
/// evidence is never the peak or its neighbors, the peak scores 1, and each
/// query has one evidence page; otherwise distractors score 1 or 2.
pub fn planted_ring_spec(
    n_pages: usize,
    n_queries: usize,
    adversarial: bool,
    seed: u64,
) -> SyntheticSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_f1c5);
    let mut spec = SyntheticSpec::new("ring", n_pages, n_pages + 8, Topology::Ring, seed);
    let at = |p: usize, off: isize| (p as isize + off).rem_euclid(n_pages as isize) as usize;
    for _ in 0..n_queries {
        let peak = rng.random_range(0..n_pages);
        let mut evidence = BTreeSet::new();
        let n_evidence = if adversarial {
            1
        } else {
            rng.random_range(1..=2)
        };
        while evidence.len() < n_evidence {
            let min_dist = if adversarial { 2 } else { 0 };
            let dist = rng.random_range(min_dist..=5) as isize;
            let off = if rng.random_bool(0.5) { dist } else { -dist };
            evidence.insert(at(peak, off));
        }
        let mut logical_scores = BTreeMap::new();
        if !adversarial {
            for p in 0..n_pages {
                if rng.random_bool(0.3) {
                    logical_scores.insert(p, LogicalScore::new(2).expect("in range"));
                }
            }
        }
        for &e in &evidence {
            logical_scores.insert(e, LogicalScore::MAX);
        }
        spec.queries.push(PlantedQuery {
            query_id: None,
            evidence_pages: evidence,
            semantic_peak_pages: vec![peak],
            logical_scores,
            default_logical: LogicalScore::MIN,
        });
    }
    spec
}
