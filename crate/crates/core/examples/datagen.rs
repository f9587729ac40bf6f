//! Runs the triplet pipeline against scripted oracles: balanced target
//! scores, question generation, re-scoring, and the tolerance filter.
//!
//! cargo run --example datagen

use pagegraph::datagen::{
    export_review_csv, export_triplets, generate_and_check, sample_targets, DatagenConfig,
};
use pagegraph::oracle::{
    GenOracle, GenRequest, GenResponse, LogicalOracle, LogicalScore, OracleError, OracleRequest,
};

/// Writes a question and records the requested score in it.
struct Writer;

impl GenOracle for Writer {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, OracleError> {
        let focus = req.focus.as_deref().unwrap_or("the page");
        Ok(GenResponse {
            query: format!(
                "[{}] What does {focus} on {} show?",
                req.target_score, req.image_ref
            ),
            relevance_score: req.target_score,
            answer: "see page".into(),
        })
    }
}

/// Re-scores questions with a bias: anything above 3 reads as one point lower,
/// and questions about tables read as irrelevant.
struct Judge;

impl LogicalOracle for Judge {
    fn score(&self, req: &OracleRequest) -> Result<LogicalScore, OracleError> {
        let asked: i64 = req.query_text[1..2].parse().unwrap();
        let s = if req.query_text.contains("table") {
            1
        } else if asked > 3 {
            asked - 1
        } else {
            asked
        };
        Ok(LogicalScore::new(s).unwrap())
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let images = (0..8).map(|i| format!("annual-report/{i}.png")).collect();
    let mut cfg = DatagenConfig::new(images, 40, 11);
    cfg.focus_pool = vec![None, Some("the chart".into()), Some("the table".into())];
    cfg.concurrency = 4;

    let items = sample_targets(&cfg)?;
    let outcome = generate_and_check(&items, &Writer, &Judge, &cfg)?;
    println!("score  generated  retained");
    for (score, c) in outcome.per_score() {
        println!("{score:>5} {:>10} {:>9}", c.generated, c.retained);
    }
    for t in outcome.triplets.iter().take(4) {
        println!(
            "{} -> {} kept={} | {}",
            t.target_score, t.predicted_score, t.retained, t.question
        );
    }

    let dir = tempfile::tempdir()?;
    let kept = export_triplets(&outcome.triplets, &dir.path().join("retained.jsonl"), true)?;
    export_review_csv(&outcome.triplets, &dir.path().join("review.csv"))?;
    println!(
        "\nexported {kept} retained triplets to {}",
        dir.path().display()
    );
    Ok(())
}
