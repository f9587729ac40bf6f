//! Compares the four traversal modes on planted ring documents, once with
//! evidence near the semantic peak and once with adversarial placement.
//!
//! cargo run --example ablations

use pagegraph::fixtures::{planted_ring_spec, synth};
use pagegraph::metrics::{evaluate, NdcgVariant, RetrievedList};
use pagegraph::oracle::MockOracle;
use pagegraph::retrieval::{traverse, Mode, TraversalConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for adversarial in [false, true] {
        let corpus = synth(&planted_ring_spec(60, 20, adversarial, 3))?;
        let oracle = MockOracle::from_entries(corpus.fixture.clone())?;
        println!(
            "{} suite: {} pages, {} queries",
            if adversarial {
                "adversarial"
            } else {
                "friendly"
            },
            corpus.store.len(),
            corpus.queries.len()
        );
        println!(
            "  {:<14} {:>8} {:>8} {:>8} {:>9}",
            "mode", "R@1", "R@3", "MRR@5", "queried"
        );
        for mode in Mode::ALL {
            let cfg = TraversalConfig {
                mode,
                ..Default::default()
            };
            let mut lists = Vec::new();
            let mut queried = 0.0;
            for q in &corpus.queries {
                let run = traverse(q, "", &corpus.store, &corpus.graph, &oracle, &cfg)?;
                queried += run.queried_fraction();
                lists.push(RetrievedList {
                    query_id: q.query_id.clone(),
                    pages: run.topk(5)?,
                });
            }
            let report = evaluate(&lists, &corpus.samples, &[1, 3, 5], NdcgVariant::Truncated)?;
            println!(
                "  {:<14} {:>8.3} {:>8.3} {:>8.3} {:>8.1}%",
                mode.as_str(),
                report.mean[&1].recall,
                report.mean[&3].recall,
                report.mean[&5].mrr,
                100.0 * queried / corpus.queries.len() as f64
            );
        }
        println!();
    }
    Ok(())
}
