//! Writes a planted synthetic corpus to disk and prints the commands that
//! run the full pipeline over it with the `pagegraph` binary.
//!
//! cargo run --example synthetic_corpus -- [out-dir]

use std::path::PathBuf;

use pagegraph::fixtures::{planted_ring_spec, synth};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("pagegraph-demo"));
    let spec = planted_ring_spec(50, 10, false, 42);
    let corpus = synth(&spec)?;
    let paths = corpus.write_to(&dir)?;
    std::fs::write(dir.join("spec.json"), serde_json::to_vec_pretty(&spec)?)?;

    println!(
        "{} pages, {} edges, {} queries written to {}",
        corpus.store.len(),
        corpus.graph.edge_count(),
        corpus.queries.len(),
        dir.display()
    );
    let (e, q, f, d, o) = (
        paths.embeddings.display(),
        paths.queries.display(),
        paths.fixture.display(),
        paths.dataset.display(),
        dir.join("out").display().to_string(),
    );
    println!("\npagegraph index    --embeddings {e} --out {o}");
    println!("pagegraph retrieve --embeddings {e} --queries {q} --graph {o}/graph.json --dataset {d} --oracle mock:{f} --out {o}");
    println!("pagegraph eval     --dataset {d} --out {o}");
    println!("pagegraph stats    --runs {o}/runs");
    Ok(())
}
