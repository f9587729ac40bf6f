mod common;

use std::collections::BTreeSet;

use common::reference_metrics;

use pagegraph::metrics::{
    evaluate, mrr_at_k, ndcg_at_k, precision_at_k, recall_at_k, EvalSample, MetricsError,
    NdcgVariant, RetrievedList,
};
use proptest::prelude::*;

fn set(v: &[usize]) -> BTreeSet<usize> {
    v.iter().copied().collect()
}

/// Retrieved list without duplicates plus non-empty ground truth.
fn case() -> impl Strategy<Value = (Vec<usize>, BTreeSet<usize>, usize)> {
    (
        Just((0..30).collect::<Vec<usize>>()).prop_shuffle(),
        0usize..31,
        prop::collection::btree_set(0usize..30, 1..8),
        1usize..12,
    )
        .prop_map(|(perm, len, gt, k)| (perm[..len].to_vec(), gt, k))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn metric_bounds_and_identities((retrieved, gt, k) in case()) {
        let r = recall_at_k(&retrieved, &gt, k).unwrap();
        let p = precision_at_k(&retrieved, &gt, k).unwrap();
        let n = ndcg_at_k(&retrieved, &gt, k, NdcgVariant::Truncated).unwrap();
        let s = ndcg_at_k(&retrieved, &gt, k, NdcgVariant::Standard).unwrap();
        let m = mrr_at_k(&retrieved, &gt, k).unwrap();
        for v in [r, p, n, m] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        // same hit count seen from two sides
        prop_assert!((p * k as f64 - r * gt.len() as f64).abs() < 1e-9);
        // the conventional variant sums over at least as many positions
        prop_assert!(s >= n - 1e-12);
        prop_assert!(recall_at_k(&retrieved, &gt, k + 1).unwrap() >= r);
        prop_assert_eq!(m > 0.0, r > 0.0);
    }

    #[test]
    fn matches_reference_evaluator((retrieved, gt, k) in case()) {
        let got = [
            recall_at_k(&retrieved, &gt, k).unwrap(),
            precision_at_k(&retrieved, &gt, k).unwrap(),
            ndcg_at_k(&retrieved, &gt, k, NdcgVariant::Truncated).unwrap(),
            mrr_at_k(&retrieved, &gt, k).unwrap(),
        ];
        for (g, w) in got.iter().zip(reference_metrics(&retrieved, &gt, k)) {
            prop_assert!((g - w).abs() < 1e-9);
        }
        let m = got[3];
        prop_assert!(m == 0.0 || (1..=k).any(|i| m == 1.0 / i as f64));
    }

    #[test]
    fn tail_order_is_irrelevant((retrieved, gt, k) in case(), seed in any::<u64>()) {
        let mut tail = retrieved.iter().skip(k).copied().collect::<Vec<_>>();
        let len = tail.len();
        if len > 1 {
            tail.rotate_left((seed as usize) % len);
        }
        let shuffled: Vec<usize> = retrieved.iter().take(k).copied().chain(tail).collect();
        for variant in [NdcgVariant::Truncated, NdcgVariant::Standard] {
            prop_assert_eq!(
                ndcg_at_k(&retrieved, &gt, k, variant).unwrap(),
                ndcg_at_k(&shuffled, &gt, k, variant).unwrap()
            );
        }
        prop_assert_eq!(mrr_at_k(&retrieved, &gt, k).unwrap(), mrr_at_k(&shuffled, &gt, k).unwrap());
        prop_assert_eq!(recall_at_k(&retrieved, &gt, k).unwrap(), recall_at_k(&shuffled, &gt, k).unwrap());
    }

    #[test]
    fn ideal_ranking_scores_one(gt in prop::collection::btree_set(0usize..50, 1..8), k in 1usize..10) {
        let ranked: Vec<usize> = gt.iter().copied().chain(100..120).collect();
        prop_assert!((ndcg_at_k(&ranked, &gt, k, NdcgVariant::Truncated).unwrap() - 1.0).abs() < 1e-12);
        prop_assert_eq!(mrr_at_k(&ranked, &gt, k).unwrap(), 1.0);
        if k >= gt.len() {
            prop_assert_eq!(recall_at_k(&ranked, &gt, k).unwrap(), 1.0);
        }
    }
}

#[test]
fn worked_example() {
    let gt = set(&[2, 5]);
    let got = [5, 1, 2];
    assert_eq!(recall_at_k(&got, &gt, 3).unwrap(), 1.0);
    assert!((precision_at_k(&got, &gt, 3).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    let idcg = 1.0 + 1.0 / 3f64.log2();
    assert!((ndcg_at_k(&got, &gt, 3, NdcgVariant::Truncated).unwrap() - 1.0 / idcg).abs() < 1e-12);
    assert!((ndcg_at_k(&got, &gt, 3, NdcgVariant::Standard).unwrap() - 1.5 / idcg).abs() < 1e-12);
    assert_eq!(mrr_at_k(&got, &gt, 3).unwrap(), 1.0);
}

#[test]
fn misses_and_late_hits() {
    let gt = set(&[9]);
    assert_eq!(recall_at_k(&[1, 2, 3], &gt, 3).unwrap(), 0.0);
    assert_eq!(mrr_at_k(&[1, 2, 9], &gt, 3).unwrap(), 1.0 / 3.0);
    // the hit sits past the truncation point of the truncated form
    assert_eq!(
        ndcg_at_k(&[1, 2, 9], &gt, 3, NdcgVariant::Truncated).unwrap(),
        0.0
    );
    assert!(matches!(
        recall_at_k(&[1], &BTreeSet::new(), 1),
        Err(MetricsError::EmptyGroundTruth(_))
    ));
}

fn sample(id: &str, evidence: &[usize]) -> EvalSample {
    EvalSample {
        query_id: id.into(),
        doc_id: "d".into(),
        question: "?".into(),
        evidence_pages: set(evidence),
        answer: None,
    }
}

#[test]
fn report_averages_over_samples() {
    let lists = vec![
        RetrievedList {
            query_id: "a".into(),
            pages: vec![1, 2, 3],
        },
        RetrievedList {
            query_id: "b".into(),
            pages: vec![4, 5, 6],
        },
        RetrievedList {
            query_id: "extra".into(),
            pages: vec![0],
        },
    ];
    let samples = vec![sample("a", &[1]), sample("b", &[9])];
    let report = evaluate(&lists, &samples, &[1, 3], NdcgVariant::Truncated).unwrap();
    assert_eq!(report.sample_count, 2);
    assert_eq!(report.mean[&1].recall, 0.5);
    assert_eq!(report.mean[&3].mrr, 0.5);
    assert!(report.to_table().contains("Recall"));
}

#[test]
fn report_rejects_bad_inputs() {
    let dup = vec![RetrievedList {
        query_id: "a".into(),
        pages: vec![1, 1],
    }];
    assert!(matches!(
        evaluate(&dup, &[sample("a", &[1])], &[1], NdcgVariant::Truncated),
        Err(MetricsError::DuplicateRetrieved { .. })
    ));
    assert!(matches!(
        evaluate(&[], &[sample("a", &[1])], &[1], NdcgVariant::Truncated),
        Err(MetricsError::MissingRun(_))
    ));
}

#[test]
fn zero_scores_are_positive_zero() {
    let v = ndcg_at_k(&[1, 2], &set(&[7]), 2, NdcgVariant::Truncated).unwrap();
    assert!(v == 0.0 && v.is_sign_positive());
}
