//! Builds page graphs over random multi-vector pages at several thresholds
//! and prints how the structure thins out as the threshold rises.
//!
//! cargo run --example build_graph

use pagegraph::embedding::{EmbeddingStore, MultiVector};
use pagegraph::graph::build_graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = 6;
    let pages = (0..16)
        .map(|_| {
            let k = rng.random_range(2..=5);
            let rows: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            MultiVector::from_rows(&rows)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let store = EmbeddingStore::new("report", pages)?;
    println!("{} pages, d = {}", store.len(), store.dim());

    for theta in [0.2, 0.3, 0.4, 0.5, 0.6, 0.7] {
        let graph = build_graph(&store, theta)?;
        println!(
            "theta {theta:.1}: {:>3} edges, max degree {:>2}, components {:?}",
            graph.edge_count(),
            graph.max_degree(),
            graph.component_sizes()
        );
    }

    let graph = build_graph(&store, 0.4)?;
    println!("\nstrongest links at theta 0.4:");
    let mut edges: Vec<_> = graph.edge_scores().iter().collect();
    edges.sort_by(|a, b| b.1.total_cmp(a.1));
    for ((i, j), s) in edges.into_iter().take(5) {
        println!("  {i:>2} -- {j:<2} {s:.3}");
    }
    println!(
        "pages within 2 hops of page 0: {}",
        graph
            .hop_distances(&[0])
            .iter()
            .filter(|d| d.is_some_and(|d| d <= 2))
            .count()
    );
    Ok(())
}
