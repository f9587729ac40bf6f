//! Threshold page graph.
//!
//! Pages `i != j` are joined when their symmetric MaxSim similarity is at
//! least `theta`. The graph is undirected, has no self-loops, and keeps
//! isolated pages as nodes.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{page_page_similarity, EmbeddingError, EmbeddingStore};
use crate::io::write_atomic;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("page {page} out of range for graph with {n_pages} pages")]
    PageOutOfRange { page: usize, n_pages: usize },
    #[error("theta {0} outside [-1, 1]")]
    InvalidTheta(f64),
    #[error("malformed graph file: {0}")]
    MalformedFile(String),
    #[error("graph invariant violated: {0}")]
    InvariantViolation(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PageGraph {
    doc_id: String,
    n_pages: usize,
    theta: f64,
    adjacency: Vec<Vec<usize>>,
    /// Similarity of each edge keyed by `(i, j)` with `i < j`. Diagnostics only.
    edge_scores: BTreeMap<(usize, usize), f64>,
}

impl PageGraph {
    /// Builds the graph from validated edges (`i < j`, every score >= theta).
    fn from_edges(
        doc_id: String,
        n_pages: usize,
        theta: f64,
        edge_scores: BTreeMap<(usize, usize), f64>,
    ) -> Self {
        let mut adjacency = vec![Vec::new(); n_pages];
        for &(i, j) in edge_scores.keys() {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Self {
            doc_id,
            n_pages,
            theta,
            adjacency,
            edge_scores,
        }
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn n_pages(&self) -> usize {
        self.n_pages
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn edge_count(&self) -> usize {
        self.edge_scores.len()
    }

    pub fn edge_scores(&self) -> &BTreeMap<(usize, usize), f64> {
        &self.edge_scores
    }

    /// Neighbors of `page_id`, ascending.
    pub fn neighbors(&self, page_id: usize) -> Result<&[usize], GraphError> {
        self.adjacency
            .get(page_id)
            .map(Vec::as_slice)
            .ok_or(GraphError::PageOutOfRange {
                page: page_id,
                n_pages: self.n_pages,
            })
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edge_scores.contains_key(&(i.min(j), i.max(j)))
    }

    /// Sizes of the connected components, in order of their smallest page id.
    pub fn component_sizes(&self) -> Vec<usize> {
        let mut seen = vec![false; self.n_pages];
        let mut sizes = Vec::new();
        for start in 0..self.n_pages {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut size = 0;
            while let Some(u) = stack.pop() {
                size += 1;
                for &v in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            sizes.push(size);
        }
        sizes
    }

    pub fn is_connected(&self) -> bool {
        self.component_sizes().len() <= 1
    }

    /// Breadth-first hop distances from a set of source pages; `None` if unreachable.
    pub fn hop_distances(&self, sources: &[usize]) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n_pages];
        let mut queue = std::collections::VecDeque::new();
        for &s in sources {
            if s < self.n_pages && dist[s].is_none() {
                dist[s] = Some(0);
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            let du = dist[u].expect("queued nodes have a distance");
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

/// Connects every pair of pages whose similarity is at least `theta`.
pub fn build_graph(store: &EmbeddingStore, theta: f64) -> Result<PageGraph, GraphError> {
    if !(-1.0..=1.0).contains(&theta) {
        return Err(GraphError::InvalidTheta(theta));
    }
    let pages = store.pages();
    let n = pages.len();
    let per_row: Vec<Vec<((usize, usize), f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = Vec::new();
            for j in (i + 1)..n {
                let sim = page_page_similarity(&pages[i], &pages[j])?;
                if sim >= theta {
                    row.push(((i, j), sim));
                }
            }
            Ok(row)
        })
        .collect::<Result<_, EmbeddingError>>()?;
    let edges = per_row.into_iter().flatten().collect();
    Ok(PageGraph::from_edges(
        store.doc_id().to_string(),
        n,
        theta,
        edges,
    ))
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    doc_id: String,
    n_pages: usize,
    theta: f64,
    edges: Vec<(usize, usize, f64)>,
}

impl PageGraph {
    pub fn to_json(&self) -> Vec<u8> {
        let file = GraphFile {
            doc_id: self.doc_id.clone(),
            n_pages: self.n_pages,
            theta: self.theta,
            edges: self
                .edge_scores
                .iter()
                .map(|(&(i, j), &s)| (i, j, s))
                .collect(),
        };
        serde_json::to_vec(&file).expect("graph serialization is infallible")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, GraphError> {
        let file: GraphFile =
            serde_json::from_slice(bytes).map_err(|e| GraphError::MalformedFile(e.to_string()))?;
        if !file.theta.is_finite() {
            return Err(GraphError::MalformedFile("theta is not finite".into()));
        }
        let mut edges = BTreeMap::new();
        let mut prev: Option<(usize, usize)> = None;
        for (i, j, score) in file.edges {
            let violation = |msg: String| Err(GraphError::InvariantViolation(msg));
            if i == j {
                return violation(format!("self-loop on page {i}"));
            }
            if i > j {
                return violation(format!("edge ({i}, {j}) is not stored as i < j"));
            }
            if j >= file.n_pages {
                return violation(format!("edge ({i}, {j}) exceeds n_pages {}", file.n_pages));
            }
            if prev.is_some_and(|p| p >= (i, j)) {
                return violation(format!("edge ({i}, {j}) out of order or duplicated"));
            }
            if score.is_nan() || score < file.theta {
                return violation(format!(
                    "edge ({i}, {j}) score {score} below theta {}",
                    file.theta
                ));
            }
            prev = Some((i, j));
            edges.insert((i, j), score);
        }
        Ok(Self::from_edges(
            file.doc_id,
            file.n_pages,
            file.theta,
            edges,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        write_atomic(path, &self.to_json()).map_err(|source| GraphError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        let bytes = std::fs::read(path).map_err(|source| GraphError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&bytes)
    }
}
