//! Command layer behind the `pagegraph` binary.
//!
//! Every command takes a [`RunConfig`]. Values come from command-line flags,
//! then from an optional TOML config file (`--config`), then from built-in
//! defaults; flags always win. All output files are written atomically.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::datagen::{self, DatagenConfig, ScoreSampling};
use crate::embedding::{self, Format};
use crate::fixtures::{self, CorpusPaths, SyntheticSpec};
use crate::graph::{build_graph, PageGraph};
use crate::io::write_atomic;
use crate::metrics::{self, MetricReport, NdcgVariant, RetrievedList};
use crate::oracle::{GenOracle, HttpOracle, LogicalOracle, MockGenOracle, MockOracle};
use crate::retrieval::{traverse, Mode, RetrievalRun, TraversalConfig};

/// Environment variable naming the default oracle endpoint.
pub const ORACLE_URL_ENV: &str = "MOLORAG_ORACLE_URL";

pub const DEFAULT_THETA: f64 = 0.4;
pub const DEFAULT_W: usize = 3;
pub const DEFAULT_HOPS: usize = 4;
pub const DEFAULT_TOPK: [usize; 3] = [1, 3, 5];
pub const DEFAULT_COMBINE_WEIGHT: f64 = 0.5;

#[derive(Debug, Parser)]
#[command(
    name = "pagegraph",
    version,
    about = "Page-graph retrieval over multi-vector page embeddings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the page graph from page embeddings.
    Index(RunConfig),
    /// Run graph traversal retrieval for every query.
    Retrieve(RunConfig),
    /// Score retrieval runs against an evaluation dataset.
    Eval(RunConfig),
    /// Generate and filter training triplets.
    Datagen(RunConfig),
    /// Summarize how much of each document the runs queried.
    Stats(RunConfig),
    /// Generate a synthetic document from a spec file.
    Synth(RunConfig),
}

/// Settings shared by all commands. Every field is optional so that flag
/// values and config-file values can be layered.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// TOML config file; flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Page embeddings (MVE1 binary, or JSON by `.json` extension).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Query embeddings, same formats as pages.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Page graph JSON (written by `index`, read by `retrieve`).
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Evaluation dataset JSONL.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Edge threshold on page-page similarity
    #[arg(long)]
    pub theta: Option<f64>,
    /// Exploration set size.
    #[arg(long)]
    pub w: Option<usize>,
    /// Hop limit.
    #[arg(long)]
    pub hops: Option<usize>,
    /// Cutoffs for evaluation, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub topk: Option<Vec<usize>>,
    /// molorag | logi_only | full | semantic_only
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Relevance oracle: `mock:<fixture.jsonl>` or `http:<url>`.
    #[arg(long)]
    pub oracle: Option<String>,
    /// Generation oracle for datagen: `mock:<fixture.jsonl>` or `http:<url>`.
    #[arg(long)]
    pub gen_oracle: Option<String>,
    /// Weight of the semantic term in the combined score
    #[arg(long)]
    pub combine_weight: Option<f64>,
    /// RNG seed for datagen and synth
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report conventional NDCG (DCG summed over all K positions).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub ndcg_standard: Option<bool>,
    /// Judge the pages of one frontier concurrently.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub concurrent: Option<bool>,
    /// Directory of run JSON files (defaults to `<out>/runs`).
    #[arg(long)]
    pub runs: Option<PathBuf>,
    /// Datagen: text file with one image reference per line.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Datagen: number of targets to sample.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Datagen: focus hints, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub focus: Option<Vec<String>>,
    /// Datagen: cycle target scores 1..5 instead of drawing them.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub round_robin: Option<bool>,
    /// Datagen: parallel items.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Synth: spec JSON file.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

macro_rules! layer {
    ($hi:expr, $lo:expr; $($field:ident),* $(,)?) => {
        RunConfig { config: $hi.config.clone(), $($field: $hi.$field.clone().or_else(|| $lo.$field.clone()),)* }
    };
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("parsing config file")
    }

    /// Applies the `--config` file underneath the flag values, if one was given.
    pub fn resolve(self) -> Result<Self> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = fs::read_to_string(&path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let file = Self::from_toml(&text)?;
        Ok(self.layered_over(&file))
    }

    /// Field-wise `self` where set, else `lower`.
    pub fn layered_over(&self, lower: &RunConfig) -> RunConfig {
        layer!(self, lower;
            embeddings, queries, graph, dataset, theta, w, hops, topk, mode, oracle,
            gen_oracle, combine_weight, seed, out, ndcg_standard, concurrent, runs,
            images, samples, focus, round_robin, workers, spec)
    }

    pub fn theta(&self) -> f64 {
        self.theta.unwrap_or(DEFAULT_THETA)
    }

    pub fn traversal(&self) -> TraversalConfig {
        TraversalConfig {
            w: self.w.unwrap_or(DEFAULT_W),
            n_hop: self.hops.unwrap_or(DEFAULT_HOPS),
            mode: self.mode.unwrap_or_default(),
            combine_weight: self.combine_weight.unwrap_or(DEFAULT_COMBINE_WEIGHT),
            concurrent_scoring: self.concurrent.unwrap_or(false),
        }
    }

    pub fn ks(&self) -> Vec<usize> {
        let mut ks = self.topk.clone().unwrap_or_else(|| DEFAULT_TOPK.to_vec());
        ks.sort_unstable();
        ks.dedup();
        ks
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.runs
            .clone()
            .unwrap_or_else(|| self.out_dir().join("runs"))
    }

    fn ndcg_variant(&self) -> NdcgVariant {
        if self.ndcg_standard.unwrap_or(false) {
            NdcgVariant::Standard
        } else {
            NdcgVariant::Truncated
        }
    }

    /// Oracle spec from the config, falling back to the environment.
    pub fn oracle_spec(&self) -> Option<String> {
        self.oracle.clone().or_else(|| {
            std::env::var(ORACLE_URL_ENV)
                .ok()
                .filter(|u| !u.is_empty())
                .map(|u| format!("http:{u}"))
        })
    }
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .with_context(|| format!("--{flag} is required"))
}

enum OracleSpec<'a> {
    Mock(&'a Path),
    Http(String),
}

fn parse_oracle_spec(spec: &str) -> Result<OracleSpec<'_>> {
    if let Some(path) = spec.strip_prefix("mock:") {
        return Ok(OracleSpec::Mock(Path::new(path)));
    }
    if spec.starts_with("http://") || spec.starts_with("https://") {
        return Ok(OracleSpec::Http(spec.to_string()));
    }
    if let Some(rest) = spec.strip_prefix("http:") {
        if rest.starts_with("http://") || rest.starts_with("https://") {
            return Ok(OracleSpec::Http(rest.to_string()));
        }
        return Ok(OracleSpec::Http(format!("http://{rest}")));
    }
    bail!("oracle spec {spec:?} must be mock:<path> or http:<url>")
}

pub fn make_logical_oracle(spec: &str) -> Result<Box<dyn LogicalOracle>> {
    Ok(match parse_oracle_spec(spec)? {
        OracleSpec::Mock(path) => Box::new(MockOracle::load(path)?),
        OracleSpec::Http(url) => Box::new(HttpOracle::with_defaults(url)),
    })
}

pub fn make_gen_oracle(spec: &str) -> Result<Box<dyn GenOracle>> {
    Ok(match parse_oracle_spec(spec)? {
        OracleSpec::Mock(path) => Box::new(MockGenOracle::load(path)?),
        OracleSpec::Http(url) => Box::new(HttpOracle::with_defaults(url)),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_store(path: &Path) -> Result<embedding::EmbeddingStore> {
    embedding::load_store(path, Format::from_path(path))
        .with_context(|| format!("loading embeddings {}", path.display()))
}

// ---------------------------------------------------------------------------
// index
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexSummary {
    pub doc_id: String,
    pub n_pages: usize,
    pub edges: usize,
    pub isolated: usize,
    pub theta: f64,
    pub graph_path: PathBuf,
}

pub fn cmd_index(cfg: &RunConfig) -> Result<IndexSummary> {
    let store = load_store(require(&cfg.embeddings, "embeddings")?)?;
    let graph = build_graph(&store, cfg.theta())?;
    let graph_path = cfg
        .graph
        .clone()
        .unwrap_or_else(|| cfg.out_dir().join("graph.json"));
    graph.save(&graph_path)?;
    let isolated = (0..graph.n_pages())
        .filter(|&p| graph.neighbors(p).is_ok_and(<[usize]>::is_empty))
        .count();
    Ok(IndexSummary {
        doc_id: graph.doc_id().to_string(),
        n_pages: graph.n_pages(),
        edges: graph.edge_count(),
        isolated,
        theta: graph.theta(),
        graph_path,
    })
}

// ---------------------------------------------------------------------------
// retrieve
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTelemetry {
    pub query_id: String,
    pub n_pages: usize,
    pub queried_pages: usize,
    pub queried_fraction: f64,
    pub hops_used: usize,
    pub visited: usize,
}

impl From<&RetrievalRun> for RunTelemetry {
    fn from(run: &RetrievalRun) -> Self {
        Self {
            query_id: run.query_id.clone(),
            n_pages: run.n_pages,
            queried_pages: run.queried_pages,
            queried_fraction: run.queried_fraction(),
            hops_used: run.hops_used,
            visited: run.visited.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieveSummary {
    pub mode: Mode,
    pub w: usize,
    pub n_hop: usize,
    pub combine_weight: f64,
    pub runs: Vec<RunTelemetry>,
    pub mean_queried_fraction: f64,
}

/// File name for a run; query ids are sanitized to a safe character set.
pub fn run_file_name(query_id: &str) -> String {
    let safe: String = query_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.json")
}

pub fn cmd_retrieve(cfg: &RunConfig) -> Result<RetrieveSummary> {
    let store = load_store(require(&cfg.embeddings, "embeddings")?)?;
    let queries_path = require(&cfg.queries, "queries")?;
    let queries = embedding::load_queries(queries_path, Format::from_path(queries_path))
        .with_context(|| format!("loading queries {}", queries_path.display()))?;
    let graph = match &cfg.graph {
        Some(path) if path.exists() => PageGraph::load(path)?,
        _ => build_graph(&store, cfg.theta())?,
    };
    let questions: HashMap<String, String> = match &cfg.dataset {
        Some(path) => metrics::load_dataset(path)?
            .into_iter()
            .map(|s| (s.query_id, s.question))
            .collect(),
        None => HashMap::new(),
    };
    let tcfg = cfg.traversal();
    let oracle: Box<dyn LogicalOracle> = match (tcfg.mode, cfg.oracle_spec()) {
        (_, Some(spec)) => make_logical_oracle(&spec)?,
        (Mode::SemanticOnly, None) => Box::new(MockOracle::default()),
        (_, None) => bail!(
            "--oracle (or {ORACLE_URL_ENV}) is required for mode {}",
            tcfg.mode
        ),
    };

    let runs_dir = cfg.runs_dir();
    let mut telemetry = Vec::with_capacity(queries.len());
    for q in &queries {
        let text = questions
            .get(&q.query_id)
            .map_or(q.query_id.as_str(), String::as_str);
        let run = traverse(q, text, &store, &graph, &oracle, &tcfg)
            .with_context(|| format!("retrieving for query {}", q.query_id))?;
        let path = runs_dir.join(run_file_name(&run.query_id));
        write_atomic(&path, &run.to_json())
            .with_context(|| format!("writing {}", path.display()))?;
        telemetry.push(RunTelemetry::from(&run));
    }
    let mean = if telemetry.is_empty() {
        0.0
    } else {
        telemetry.iter().map(|t| t.queried_fraction).sum::<f64>() / telemetry.len() as f64
    };
    let summary = RetrieveSummary {
        mode: tcfg.mode,
        w: tcfg.w,
        n_hop: tcfg.n_hop,
        combine_weight: tcfg.combine_weight,
        runs: telemetry,
        mean_queried_fraction: mean,
    };
    write_json(&cfg.out_dir().join("telemetry.json"), &summary)?;
    Ok(summary)
}

/// Reads every `*.json` run in `dir`, sorted by file name.
pub fn load_runs(dir: &Path) -> Result<Vec<RetrievalRun>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading run directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_slice(&bytes).with_context(|| format!("parsing run {}", p.display()))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

pub fn cmd_eval(cfg: &RunConfig) -> Result<MetricReport> {
    let samples = metrics::load_dataset(require(&cfg.dataset, "dataset")?)?;
    let runs = load_runs(&cfg.runs_dir())?;
    let ks = cfg.ks();
    let k_max = *ks.last().context("--topk must list at least one K")?;
    let lists = runs
        .iter()
        .map(|run| {
            Ok(RetrievedList {
                query_id: run.query_id.clone(),
                pages: run.topk(k_max)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = metrics::evaluate(&lists, &samples, &ks, cfg.ndcg_variant())?;
    let out = cfg.out_dir();
    write_json(&out.join("report.json"), &report)?;
    write_atomic(&out.join("report.txt"), report.to_table().as_bytes())?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// datagen
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatagenSummary {
    pub sampled: usize,
    pub judged: usize,
    pub retained: usize,
    pub failed: usize,
    pub per_score: std::collections::BTreeMap<u8, datagen::ScoreCounts>,
    pub failures: Vec<datagen::FailedItem>,
}

pub fn cmd_datagen(cfg: &RunConfig) -> Result<DatagenSummary> {
    let images_path = require(&cfg.images, "images")?;
    let image_pool: Vec<String> = fs::read_to_string(images_path)
        .with_context(|| format!("reading {}", images_path.display()))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    let mut dcfg = DatagenConfig::new(image_pool, cfg.samples.unwrap_or(100), cfg.seed());
    if cfg.round_robin.unwrap_or(false) {
        dcfg.sampling = ScoreSampling::RoundRobin;
    }
    if let Some(focus) = &cfg.focus {
        dcfg.focus_pool = focus.iter().map(|f| Some(f.clone())).collect();
    }
    dcfg.concurrency = cfg.workers.unwrap_or(1);
    let gen_spec = cfg.gen_oracle.clone().context("--gen-oracle is required")?;
    let score_spec = cfg
        .oracle_spec()
        .with_context(|| format!("--oracle (or {ORACLE_URL_ENV}) is required"))?;
    let gen = make_gen_oracle(&gen_spec)?;
    let scorer = make_logical_oracle(&score_spec)?;

    let items = datagen::sample_targets(&dcfg)?;
    let outcome = datagen::generate_and_check(&items, &gen, &scorer, &dcfg)?;
    let out = cfg.out_dir();
    datagen::export_triplets(&outcome.triplets, &out.join("triplets.jsonl"), false)?;
    let retained = datagen::export_triplets(&outcome.triplets, &out.join("retained.jsonl"), true)?;
    datagen::export_review_csv(&outcome.triplets, &out.join("review.csv"))?;
    let summary = DatagenSummary {
        sampled: items.len(),
        judged: outcome.triplets.len(),
        retained,
        failed: outcome.failed.len(),
        per_score: outcome.per_score(),
        failures: outcome.failed.clone(),
    };
    write_json(&out.join("datagen_summary.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub runs: usize,
    pub mean_pages: f64,
    pub mean_queried_pages: f64,
    pub mean_queried_fraction: f64,
    pub min_queried_fraction: f64,
    pub p50_queried_fraction: f64,
    pub p90_queried_fraction: f64,
    pub max_queried_fraction: f64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn summarize_runs(runs: &[RetrievalRun]) -> StatsSummary {
    let n = runs.len().max(1) as f64;
    let mut fractions: Vec<f64> = runs.iter().map(RetrievalRun::queried_fraction).collect();
    fractions.sort_by(f64::total_cmp);
    StatsSummary {
        runs: runs.len(),
        mean_pages: runs.iter().map(|r| r.n_pages as f64).sum::<f64>() / n,
        mean_queried_pages: runs.iter().map(|r| r.queried_pages as f64).sum::<f64>() / n,
        mean_queried_fraction: fractions.iter().sum::<f64>() / n,
        min_queried_fraction: fractions.first().copied().unwrap_or(0.0),
        p50_queried_fraction: percentile(&fractions, 50.0),
        p90_queried_fraction: percentile(&fractions, 90.0),
        max_queried_fraction: fractions.last().copied().unwrap_or(0.0),
    }
}

pub fn cmd_stats(cfg: &RunConfig) -> Result<StatsSummary> {
    let runs = load_runs(&cfg.runs_dir())?;
    if runs.is_empty() {
        bail!("no runs found in {}", cfg.runs_dir().display());
    }
    let summary = summarize_runs(&runs);
    if let Some(out) = &cfg.out {
        write_json(&out.join("stats.json"), &summary)?;
    }
    Ok(summary)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn cmd_synth(cfg: &RunConfig) -> Result<CorpusPaths> {
    let spec_path = require(&cfg.spec, "spec")?;
    let mut spec: SyntheticSpec = serde_json::from_slice(
        &fs::read(spec_path).with_context(|| format!("reading {}", spec_path.display()))?,
    )
    .with_context(|| format!("parsing spec {}", spec_path.display()))?;
    if let Some(seed) = cfg.seed {
        spec.seed = seed;
    }
    if let Some(theta) = cfg.theta {
        spec.theta = theta;
    }
    let corpus = fixtures::synth(&spec)?;
    Ok(corpus.write_to(&cfg.out_dir())?)
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

/// Runs a parsed command and prints a short human-readable summary.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Index(cfg) => {
            let s = cmd_index(&cfg.resolve()?)?;
            println!(
                "{}: {} pages, {} edges, {} isolated (theta = {}) -> {}",
                s.doc_id,
                s.n_pages,
                s.edges,
                s.isolated,
                s.theta,
                s.graph_path.display()
            );
        }
        Command::Retrieve(cfg) => {
            let s = cmd_retrieve(&cfg.resolve()?)?;
            for t in &s.runs {
                println!(
                    "{}: queried {}/{} pages ({:.1}%), {} hops",
                    t.query_id,
                    t.queried_pages,
                    t.n_pages,
                    100.0 * t.queried_fraction,
                    t.hops_used
                );
            }
            println!(
                "{} runs, mode {}, mean queried fraction {:.4}",
                s.runs.len(),
                s.mode,
                s.mean_queried_fraction
            );
        }
        Command::Eval(cfg) => {
            let report = cmd_eval(&cfg.resolve()?)?;
            print!("{}", report.to_table());
        }
        Command::Datagen(cfg) => {
            let s = cmd_datagen(&cfg.resolve()?)?;
            println!(
                "sampled {}, judged {}, retained {}, failed {}",
                s.sampled, s.judged, s.retained, s.failed
            );
            for (score, c) in &s.per_score {
                println!(
                    "  score {score}: {} generated, {} retained",
                    c.generated, c.retained
                );
            }
        }
        Command::Stats(cfg) => {
            let s = cmd_stats(&cfg.resolve()?)?;
            println!(
                "{} runs, mean {:.1} pages, mean queried {:.2} pages",
                s.runs, s.mean_pages, s.mean_queried_pages
            );
            println!(
                "queried fraction: mean {:.4}  min {:.4}  p50 {:.4}  p90 {:.4}  max {:.4}",
                s.mean_queried_fraction,
                s.min_queried_fraction,
                s.p50_queried_fraction,
                s.p90_queried_fraction,
                s.max_queried_fraction
            );
        }
        Command::Synth(cfg) => {
            let p = cmd_synth(&cfg.resolve()?)?;
            println!("embeddings: {}", p.embeddings.display());
            println!("queries:    {}", p.queries.display());
            println!("fixture:    {}", p.fixture.display());
            println!("dataset:    {}", p.dataset.display());
        }
    }
    Ok(())
}
