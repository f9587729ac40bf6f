//! Scores a few hand-written rankings, including one where the truncated
//! NDCG and the conventional NDCG disagree.
//!
//! cargo run --example evaluate

use std::collections::BTreeSet;

use pagegraph::metrics::{evaluate, EvalSample, NdcgVariant, RetrievedList};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cases = [
        ("perfect", vec![2, 5], vec![2, 5, 7, 1, 0]),
        ("swapped", vec![2, 5], vec![5, 1, 2, 8, 9]),
        ("late hit", vec![9], vec![1, 2, 9, 4, 5]),
        ("miss", vec![3, 4, 6], vec![0, 1, 2, 5, 7]),
    ];
    let samples: Vec<EvalSample> = cases
        .iter()
        .map(|(id, gt, _)| EvalSample {
            query_id: id.to_string(),
            doc_id: "doc".into(),
            question: String::new(),
            evidence_pages: gt.iter().copied().collect::<BTreeSet<_>>(),
            answer: None,
        })
        .collect();
    let lists: Vec<RetrievedList> = cases
        .iter()
        .map(|(id, _, got)| RetrievedList {
            query_id: id.to_string(),
            pages: got.clone(),
        })
        .collect();

    for variant in [NdcgVariant::Truncated, NdcgVariant::Standard] {
        let report = evaluate(&lists, &samples, &[1, 3, 5], variant)?;
        println!("{variant:?} NDCG");
        print!("{}", report.to_table());
        for s in &report.samples {
            println!("  {:<9} ndcg@3 {:.4}", s.query_id, s.at[&3].ndcg);
        }
        println!();
    }
    Ok(())
}
