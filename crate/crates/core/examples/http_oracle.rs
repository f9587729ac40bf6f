//! Serves the scoring wire protocol from an in-process stub and drives a
//! traversal through the HTTP client. The stub fails its first request to
//! show the retry path.
//!
//! cargo run --example http_oracle

use std::sync::Arc;
use std::thread;

use pagegraph::fixtures::{planted_ring_spec, synth};
use pagegraph::oracle::{HttpOracle, ScoreWireRequest};
use pagegraph::retrieval::{traverse, TraversalConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = synth(&planted_ring_spec(30, 1, false, 5))?;
    let table = corpus.fixture.clone();

    let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").map_err(|e| e.to_string())?);
    let url = format!(
        "http://{}",
        server.server_addr().to_ip().expect("tcp listener")
    );
    let srv = Arc::clone(&server);
    let worker = thread::spawn(move || {
        for (n, mut req) in srv.incoming_requests().enumerate() {
            let body: ScoreWireRequest = serde_json::from_reader(req.as_reader()).unwrap();
            let reply = if n == 0 {
                tiny_http::Response::from_string("warming up").with_status_code(503)
            } else {
                let score = table
                    .iter()
                    .find(|e| e.query_id == body.query_id && e.page_id == body.page_id)
                    .map_or(1, |e| e.score.value());
                println!("  POST {} page {:>2} -> {score}", req.url(), body.page_id);
                tiny_http::Response::from_string(format!("{{\"score\": {score}}}"))
            };
            let _ = req.respond(reply);
        }
    });

    let oracle = HttpOracle::with_defaults(&url);
    let query = &corpus.queries[0];
    let run = traverse(
        query,
        &corpus.samples[0].question,
        &corpus.store,
        &corpus.graph,
        &oracle,
        &TraversalConfig::default(),
    )?;
    println!(
        "evidence {:?}; top-3 {:?}; {} pages scored over HTTP",
        corpus.samples[0].evidence_pages,
        run.topk(3)?,
        run.queried_pages
    );

    server.unblock();
    worker.join().unwrap();
    Ok(())
}
