//! Walks a ten-page chain where the semantic best match (page 4) sits two
//! hops away from the page the relevance oracle actually likes (page 6).
//!
//! cargo run --example traverse

use pagegraph::embedding::{EmbeddingStore, MultiVector, QueryEmbedding};
use pagegraph::graph::build_graph;
use pagegraph::oracle::{FixtureEntry, LogicalScore, MockOracle};
use pagegraph::retrieval::{traverse, Mode, TraversalConfig};

fn basis_pair(d: usize, i: usize) -> Vec<f64> {
    let mut row = vec![0.0; d];
    row[i] = 1.0;
    row[i + 1] = 1.0;
    row
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let d = 12;
    let pages = (0..10)
        .map(|i| MultiVector::from_rows(&[basis_pair(d, i)]))
        .collect::<Result<Vec<_>, _>>()?;
    let store = EmbeddingStore::new("chain", pages)?;
    let graph = build_graph(&store, 0.4)?;

    let mut q = vec![0.0; d];
    q[4] = 1.0;
    q[5] = 1.0;
    q[6] = 0.3;
    let query = QueryEmbedding {
        query_id: "q".into(),
        vectors: MultiVector::from_rows(&[q])?,
    };
    let oracle = MockOracle::from_entries((0..10).map(|page_id| FixtureEntry {
        query_id: "q".into(),
        page_id,
        score: LogicalScore::new(if page_id == 6 { 5 } else { 1 }).unwrap(),
    }))?;

    for mode in [Mode::SemanticOnly, Mode::Molorag] {
        let cfg = TraversalConfig {
            w: 1,
            n_hop: 4,
            mode,
            ..Default::default()
        };
        let run = traverse(&query, "which page?", &store, &graph, &oracle, &cfg)?;
        println!(
            "{mode}: queried {} pages in {} hops",
            run.queried_pages, run.hops_used
        );
        println!("  page   hop   s_sem  s_norm  logical  s");
        for p in run.visited.iter().take(6) {
            let logical = p.s_logi.map_or("-".to_string(), |l| l.to_string());
            println!(
                "  {:>4} {:>5} {:>7.3} {:>7.3} {:>8} {:>6.3}",
                p.page_id, p.hop_discovered, p.s_sem, p.s_sem_norm, logical, p.s
            );
        }
        println!("  top-3: {:?}\n", run.topk(3)?);
    }
    Ok(())
}
