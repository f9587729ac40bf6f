mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use pagegraph::cli::{
    cmd_datagen, cmd_eval, cmd_index, cmd_retrieve, cmd_stats, cmd_synth, load_runs, percentile,
    summarize_runs, RunConfig,
};
use pagegraph::embedding::{EmbeddingStore, MultiVector};
use pagegraph::fixtures::{planted_ring_spec, synth, CorpusPaths, SyntheticSpec, Topology};
use pagegraph::io::to_jsonl;
use pagegraph::oracle::{FixtureEntry, GenFixtureEntry, LogicalScore};
use pagegraph::retrieval::{Mode, RetrievalRun};
use rand::Rng;

fn corpus(dir: &Path, spec: &SyntheticSpec) -> CorpusPaths {
    synth(spec).unwrap().write_to(dir).unwrap()
}

fn retrieve_cfg(paths: &CorpusPaths, out: &Path) -> RunConfig {
    RunConfig {
        embeddings: Some(paths.embeddings.clone()),
        queries: Some(paths.queries.clone()),
        dataset: Some(paths.dataset.clone()),
        oracle: Some(format!("mock:{}", paths.fixture.display())),
        out: Some(out.to_path_buf()),
        ..RunConfig::default()
    }
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn pipeline_on_planted_ring() {
    let tmp = tempfile::tempdir().unwrap();
    let paths = corpus(
        &tmp.path().join("data"),
        &planted_ring_spec(30, 6, false, 2),
    );
    let out = tmp.path().join("out");
    let mut cfg = retrieve_cfg(&paths, &out);

    let index = cmd_index(&cfg).unwrap();
    assert_eq!((index.n_pages, index.edges, index.isolated), (30, 30, 0));
    cfg.graph = Some(index.graph_path.clone());

    let summary = cmd_retrieve(&cfg).unwrap();
    assert_eq!(summary.runs.len(), 6);
    assert!(summary
        .runs
        .iter()
        .all(|t| t.queried_pages <= 11 && t.hops_used == 4));

    let report = cmd_eval(&cfg).unwrap();
    assert_eq!(report.mean[&3].recall, 1.0);
    assert!(out.join("report.json").exists() && out.join("report.txt").exists());

    let stats = cmd_stats(&cfg).unwrap();
    assert_eq!(stats.runs, 6);
    assert!((stats.mean_queried_fraction - summary.mean_queried_fraction).abs() < 1e-12);
    assert!(stats.max_queried_fraction < 1.0);
}

#[test]
fn retrieval_outputs_are_byte_identical_across_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let paths = corpus(
        &tmp.path().join("data"),
        &planted_ring_spec(40, 8, false, 5),
    );
    for concurrent in [false, true] {
        let (a, b) = (
            tmp.path().join(format!("a{concurrent}")),
            tmp.path().join(format!("b{concurrent}")),
        );
        for out in [&a, &b] {
            let mut cfg = retrieve_cfg(&paths, out);
            cfg.concurrent = Some(concurrent);
            cmd_retrieve(&cfg).unwrap();
        }
        let (fa, fb) = (files_under(&a), files_under(&b));
        assert_eq!(fa.len(), 9);
        assert_eq!(fa, fb);
    }
}

#[test]
fn isolated_pages_and_full_mode_fractions() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = SyntheticSpec::new("iso", 10, 12, Topology::Clusters { sizes: vec![1; 10] }, 1);
    spec.queries = planted_ring_spec(10, 2, false, 1).queries;
    let paths = corpus(&tmp.path().join("data"), &spec);
    let mut cfg = retrieve_cfg(&paths, &tmp.path().join("out"));
    assert_eq!(cmd_index(&cfg).unwrap().edges, 0);
    let s = cmd_retrieve(&cfg).unwrap();
    assert!(s
        .runs
        .iter()
        .all(|t| t.queried_fraction == 0.3 && t.hops_used == 0));

    cfg.mode = Some(Mode::Full);
    let s = cmd_retrieve(&cfg).unwrap();
    assert!(s.runs.iter().all(|t| t.queried_fraction == 1.0));
}

#[test]
fn index_reports_empty_and_complete_graphs() {
    let tmp = tempfile::tempdir().unwrap();
    let write = |name: &str, rows: Vec<Vec<f64>>| {
        let store = EmbeddingStore::new(
            name,
            rows.into_iter()
                .map(|r| MultiVector::from_rows(&[r]).unwrap())
                .collect(),
        )
        .unwrap();
        let path = tmp.path().join(format!("{name}.mve"));
        fs::write(&path, store.to_binary()).unwrap();
        path
    };
    let ortho = write(
        "ortho",
        (0..4)
            .map(|i| (0..4).map(|j| f64::from(u8::from(i == j))).collect())
            .collect(),
    );
    let clones = write("clones", vec![vec![0.6, 0.8, 0.0]; 5]);
    let cfg = |p: PathBuf| RunConfig {
        embeddings: Some(p),
        out: Some(tmp.path().join("out")),
        ..RunConfig::default()
    };
    assert_eq!(cmd_index(&cfg(ortho)).unwrap().edges, 0);
    assert_eq!(cmd_index(&cfg(clones)).unwrap().edges, 10);
}

#[test]
fn semantic_only_misses_adversarial_evidence() {
    let tmp = tempfile::tempdir().unwrap();
    let paths = corpus(&tmp.path().join("data"), &planted_ring_spec(30, 6, true, 8));
    let mut cfg = retrieve_cfg(&paths, &tmp.path().join("out"));
    cfg.mode = Some(Mode::SemanticOnly);
    cfg.oracle = None;
    cfg.topk = Some(vec![1]);
    cmd_retrieve(&cfg).unwrap();
    assert_eq!(cmd_eval(&cfg).unwrap().mean[&1].recall, 0.0);
}

fn run_with_fraction(id: &str, n_pages: usize, queried: usize) -> RetrievalRun {
    RetrievalRun {
        query_id: id.into(),
        doc_id: "d".into(),
        mode: Mode::Molorag,
        n_pages,
        visited: Vec::new(),
        queried_pages: queried,
        hops_used: 0,
        semantic_order: (0..n_pages).collect(),
    }
}

#[test]
fn stats_over_run_files() {
    let tmp = tempfile::tempdir().unwrap();
    let runs_dir = tmp.path().join("runs");
    fs::create_dir_all(&runs_dir).unwrap();
    for run in [run_with_fraction("a", 10, 2), run_with_fraction("b", 10, 4)] {
        fs::write(
            runs_dir.join(format!("{}.json", run.query_id)),
            run.to_json(),
        )
        .unwrap();
    }
    let cfg = RunConfig {
        runs: Some(runs_dir.clone()),
        ..RunConfig::default()
    };
    assert!((cmd_stats(&cfg).unwrap().mean_queried_fraction - 0.3).abs() < 1e-12);
    assert_eq!(load_runs(&runs_dir).unwrap().len(), 2);

    let single = summarize_runs(&[run_with_fraction("x", 8, 2)]);
    assert_eq!(single.mean_queried_fraction, 0.25);

    let mut r = common::rng(50);
    let runs: Vec<RetrievalRun> = (0..50)
        .map(|i| {
            let n = r.random_range(5..60);
            run_with_fraction(&format!("r{i}"), n, r.random_range(1..=n))
        })
        .collect();
    let s = summarize_runs(&runs);
    let mut fr: Vec<f64> = runs
        .iter()
        .map(|r| r.queried_pages as f64 / r.n_pages as f64)
        .collect();
    let mean = fr.iter().sum::<f64>() / 50.0;
    fr.sort_by(f64::total_cmp);
    assert!((s.mean_queried_fraction - mean).abs() < 1e-12);
    assert_eq!(s.p50_queried_fraction, fr[24]);
    assert_eq!(s.p90_queried_fraction, fr[44]);
    assert_eq!(percentile(&fr, 100.0), fr[49]);
    assert_eq!(
        (s.min_queried_fraction, s.max_queried_fraction),
        (fr[0], fr[49])
    );
}

#[test]
fn datagen_command_writes_all_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let images: Vec<String> = (0..4).map(|i| format!("doc/{i}.png")).collect();
    let images_path = tmp.path().join("images.txt");
    fs::write(&images_path, images.join("\n") + "\n").unwrap();
    let mut gen = Vec::new();
    for img in &images {
        for s in LogicalScore::all() {
            gen.push(GenFixtureEntry {
                image_ref: img.clone(),
                target_score: s,
                query: format!("question about {img} at {s}"),
                relevance_score: s,
                answer: "yes".into(),
            });
        }
    }
    let gen_path = tmp.path().join("gen.jsonl");
    fs::write(&gen_path, to_jsonl(&gen)).unwrap();
    // the judge always answers 3, so only targets 2..=4 survive
    let scores: Vec<FixtureEntry> = (0..30)
        .map(|i| FixtureEntry {
            query_id: format!("datagen-{i}"),
            page_id: i,
            score: LogicalScore::new(3).unwrap(),
        })
        .collect();
    let score_path = tmp.path().join("scores.jsonl");
    fs::write(&score_path, to_jsonl(&scores)).unwrap();

    let out = tmp.path().join("out");
    let cfg = RunConfig {
        images: Some(images_path),
        samples: Some(30),
        seed: Some(4),
        gen_oracle: Some(format!("mock:{}", gen_path.display())),
        oracle: Some(format!("mock:{}", score_path.display())),
        out: Some(out.clone()),
        workers: Some(3),
        ..RunConfig::default()
    };
    let s = cmd_datagen(&cfg).unwrap();
    assert_eq!((s.sampled, s.judged, s.failed), (30, 30, 0));
    let expect: usize = [2u8, 3, 4].iter().map(|k| s.per_score[k].generated).sum();
    assert_eq!(s.retained, expect);
    assert_eq!(s.per_score[&1].retained + s.per_score[&5].retained, 0);
    for f in [
        "triplets.jsonl",
        "retained.jsonl",
        "review.csv",
        "datagen_summary.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let first = fs::read(out.join("triplets.jsonl")).unwrap();
    cmd_datagen(&cfg).unwrap();
    assert_eq!(first, fs::read(out.join("triplets.jsonl")).unwrap());
}

#[test]
fn synth_command_writes_corpus_from_spec_file() {
    let tmp = tempfile::tempdir().unwrap();
    let spec_path = tmp.path().join("spec.json");
    fs::write(
        &spec_path,
        serde_json::to_vec(&planted_ring_spec(16, 3, false, 1)).unwrap(),
    )
    .unwrap();
    let cfg = RunConfig {
        spec: Some(spec_path),
        out: Some(tmp.path().join("corpus")),
        ..RunConfig::default()
    };
    let paths = cmd_synth(&cfg).unwrap();
    assert!(paths.embeddings.ends_with("ring.mve"));
    assert!(paths.dataset.exists());
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pagegraph"))
}

#[test]
fn binary_exit_codes_and_config_layering() {
    let tmp = tempfile::tempdir().unwrap();
    let paths = corpus(
        &tmp.path().join("data"),
        &planted_ring_spec(20, 3, false, 6),
    );
    let out = tmp.path().join("out");
    let config = tmp.path().join("run.toml");
    fs::write(
        &config,
        format!(
            "embeddings = {:?}\nqueries = {:?}\noracle = \"mock:{}\"\nmode = \"full\"\nout = {:?}\n",
            paths.embeddings,
            paths.queries,
            paths.fixture.display(),
            out
        ),
    )
    .unwrap();

    let status = bin()
        .args(["retrieve", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let text = String::from_utf8(status.stdout).unwrap();
    assert!(text.contains("mode full"), "{text}");

    let status = bin()
        .args(["retrieve", "--mode", "molorag", "--w", "2", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(status.status.success());
    let runs = load_runs(&out.join("runs")).unwrap();
    assert!(runs
        .iter()
        .all(|r| r.mode == Mode::Molorag && r.queried_pages <= 2 + 4 * 2 * 2));

    let missing = bin()
        .args(["index", "--embeddings"])
        .arg(tmp.path().join("nope.mve"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));

    let no_oracle = bin()
        .env_remove("MOLORAG_ORACLE_URL")
        .args(["retrieve", "--embeddings"])
        .arg(&paths.embeddings)
        .arg("--queries")
        .arg(&paths.queries)
        .output()
        .unwrap();
    assert!(!no_oracle.status.success());
}
