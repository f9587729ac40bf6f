#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use pagegraph::embedding::{EmbeddingStore, MultiVector, QueryEmbedding};
use pagegraph::graph::{build_graph, PageGraph};
use pagegraph::oracle::{LogicalOracle, LogicalScore, OracleError, OracleRequest};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random rows with entries uniform in [-1, 1]; never degenerate in practice.
pub fn random_rows(rng: &mut impl Rng, k: usize, d: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| loop {
            let row: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            if row.iter().map(|x| x * x).sum::<f64>() > 1e-3 {
                break row;
            }
        })
        .collect()
}

/// Raw rows of a store, so tests can recompute scores from scratch.
pub fn random_store(
    rng: &mut impl Rng,
    n: usize,
    d: usize,
    kmax: usize,
) -> (EmbeddingStore, Vec<Vec<Vec<f64>>>) {
    let raw: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|_| {
            let k = rng.random_range(1..=kmax);
            random_rows(rng, k, d)
        })
        .collect();
    let pages = raw
        .iter()
        .map(|r| MultiVector::from_rows(r).unwrap())
        .collect();
    (EmbeddingStore::new("doc", pages).unwrap(), raw)
}

pub fn query(id: &str, rows: &[Vec<f64>]) -> QueryEmbedding {
    QueryEmbedding {
        query_id: id.to_string(),
        vectors: MultiVector::from_rows(rows).unwrap(),
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Direct late-interaction score over raw (unnormalized) rows.
pub fn brute_maxsim(q: &[Vec<f64>], d: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for qr in q {
        let qr = unit(qr);
        let mut best = f64::NEG_INFINITY;
        for dr in d {
            let dr = unit(dr);
            let dot: f64 = qr.iter().zip(&dr).map(|(a, b)| a * b).sum();
            best = best.max(dot);
        }
        total += best;
    }
    total / q.len() as f64
}

pub fn brute_pair_sim(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    0.5 * (brute_maxsim(a, b) + brute_maxsim(b, a))
}

/// Oracle backed by a table, counting every call.
pub struct TableOracle {
    pub scores: BTreeMap<(String, usize), u8>,
    pub default: u8,
    pub calls: AtomicUsize,
    pub seen: Mutex<Vec<usize>>,
}

impl TableOracle {
    pub fn per_page(query_id: &str, scores: &[u8]) -> Self {
        Self {
            scores: scores
                .iter()
                .enumerate()
                .map(|(p, &s)| ((query_id.to_string(), p), s))
                .collect(),
            default: 1,
            calls: AtomicUsize::new(0),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LogicalOracle for TableOracle {
    fn score(&self, req: &OracleRequest) -> Result<LogicalScore, OracleError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.seen.lock().unwrap().push(req.page.page_id);
        let s = self
            .scores
            .get(&(req.query_id.clone(), req.page.page_id))
            .copied()
            .unwrap_or(self.default);
        Ok(LogicalScore::new(i64::from(s)).unwrap())
    }
}

/// Page `i` of the path document: normalize(u_i + u_{i+1}) in d = n + 2.
/// Adjacent pages have similarity 0.5, all others 0.
pub fn path_document(n: usize) -> EmbeddingStore {
    let d = n + 2;
    let pages = (0..n)
        .map(|i| {
            let mut row = vec![0.0; d];
            row[i] = 1.0;
            row[i + 1] = 1.0;
            MultiVector::from_rows(&[row]).unwrap()
        })
        .collect();
    EmbeddingStore::new("path", pages).unwrap()
}

/// Hand-traced path fixture: query along u4 + u5 + 0.3 u6, so page 4 is the
/// semantic peak; only page 6 is logically relevant.
pub fn path_fixture() -> (EmbeddingStore, PageGraph, QueryEmbedding, TableOracle) {
    let store = path_document(10);
    let graph = build_graph(&store, 0.4).unwrap();
    let mut row = vec![0.0; 12];
    row[4] = 1.0;
    row[5] = 1.0;
    row[6] = 0.3;
    let q = query("q-path", &[row]);
    let mut scores = vec![1u8; 10];
    scores[6] = 5;
    (store, graph, q, TableOracle::per_page("q-path", &scores))
}

/// Straightforward restatement of the traversal, used as a reference.
/// Returns (page, s, hop) sorted by s descending then page ascending, and
/// the hop count.
pub fn reference_traverse(
    sem: &[f64],
    adjacency: &[Vec<usize>],
    logical: &[u8],
    w: usize,
    n_hop: usize,
    weight: f64,
) -> (Vec<(usize, f64, usize)>, usize) {
    let n = sem.len();
    let lo = sem.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = sem.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let norm: Vec<f64> = sem
        .iter()
        .map(|&s| if hi > lo { (s - lo) / (hi - lo) } else { 0.5 })
        .collect();
    let score = |p: usize| weight * norm[p] + (1.0 - weight) * (f64::from(logical[p]) - 1.0) / 4.0;
    let by_score = |v: &mut Vec<(usize, f64)>| {
        v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    };

    let mut order: Vec<(usize, f64)> = (0..n).map(|p| (p, sem[p])).collect();
    by_score(&mut order);
    let mut visited = vec![false; n];
    let mut out = Vec::new();
    let mut frontier: Vec<usize> = order.iter().take(w).map(|&(p, _)| p).collect();
    for &p in &frontier {
        visited[p] = true;
        out.push((p, score(p), 0));
    }
    let mut hops = 0;
    for hop in 1..=n_hop {
        let mut cand = BTreeSet::new();
        for &b in &frontier {
            for &nb in &adjacency[b] {
                if !visited[nb] {
                    cand.insert(nb);
                }
            }
        }
        if cand.is_empty() {
            break;
        }
        hops = hop;
        let mut scored: Vec<(usize, f64)> = cand.iter().map(|&p| (p, score(p))).collect();
        for &(p, s) in &scored {
            visited[p] = true;
            out.push((p, s, hop));
        }
        by_score(&mut scored);
        frontier = scored.iter().take(w).map(|&(p, _)| p).collect();
    }
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    (out, hops)
}

/// Breadth-first distances, for checking discovery hops.
pub fn bfs(adjacency: &[Vec<usize>], sources: &[usize]) -> Vec<Option<usize>> {
    let mut dist = vec![None; adjacency.len()];
    let mut queue = VecDeque::new();
    for &s in sources {
        dist[s] = Some(0);
        queue.push_back(s);
    }
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u] {
            if dist[v].is_none() {
                dist[v] = Some(dist[u].unwrap() + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

pub fn adjacency_of(graph: &PageGraph) -> Vec<Vec<usize>> {
    (0..graph.n_pages())
        .map(|p| graph.neighbors(p).unwrap().to_vec())
        .collect()
}

/// One recorded request to a [`StubServer`].
#[derive(Debug, Clone)]
pub struct Recorded {
    pub path: String,
    pub body: String,
}

/// In-process HTTP server answering from a closure `(call_index, path, body)`
/// -> `(status, body)`.
pub struct StubServer {
    pub url: String,
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
    pub requests: Arc<Mutex<Vec<Recorded>>>,
}

impl StubServer {
    pub fn start<F>(mut respond: F) -> Self
    where
        F: FnMut(usize, &str, &str) -> (u16, String) + Send + 'static,
    {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let url = format!("http://{}", server.server_addr().to_ip().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let (srv, log) = (Arc::clone(&server), Arc::clone(&requests));
        let handle = thread::spawn(move || {
            for (i, mut req) in srv.incoming_requests().enumerate() {
                let mut body = String::new();
                req.as_reader().read_to_string(&mut body).unwrap();
                let path = req.url().to_string();
                log.lock().unwrap().push(Recorded {
                    path: path.clone(),
                    body: body.clone(),
                });
                let (status, reply) = respond(i, &path, &body);
                let header =
                    tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
                let resp = tiny_http::Response::from_string(reply)
                    .with_status_code(status)
                    .with_header(header);
                let _ = req.respond(resp);
            }
        });
        Self {
            url,
            server,
            handle: Some(handle),
            requests,
        }
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Metrics recomputed position by position, 1-based as in the usual
/// textbook statement: (recall, precision, truncated ndcg, mrr).
pub fn reference_metrics(retrieved: &[usize], gt: &BTreeSet<usize>, k: usize) -> [f64; 4] {
    let n = gt.len();
    let relevant = |i: usize| i <= retrieved.len() && gt.contains(&retrieved[i - 1]);
    let mut hits = 0;
    let mut first = None;
    for i in 1..=k {
        if relevant(i) {
            hits += 1;
            first.get_or_insert(i);
        }
    }
    let top = n.min(k);
    let mut dcg = 0.0;
    let mut idcg = 0.0;
    for i in 1..=top {
        let g = 1.0 / ((i + 1) as f64).ln() * std::f64::consts::LN_2;
        if relevant(i) {
            dcg += g;
        }
        idcg += g;
    }
    [
        hits as f64 / n as f64,
        hits as f64 / k as f64,
        dcg / idcg,
        first.map_or(0.0, |i| 1.0 / i as f64),
    ]
}
