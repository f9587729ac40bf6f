//! Relevance and generation oracles.
//!
//! The traversal asks a [`LogicalOracle`] for a 1-5 relevance judgment of a
//! page against a question; the training-data pipeline additionally asks a
//! [`GenOracle`] to write a question for a page at a target relevance level.
//! Both come in two flavours: a strict fixture-backed mock, and an HTTP client
//! speaking the model sidecar's JSON protocol.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::read_jsonl;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("no fixture entry for query {query_id:?}, page {page_id}")]
    MissingFixtureEntry { query_id: String, page_id: usize },
    #[error("no generation fixture for image {image_ref:?} at score {target_score}")]
    MissingGenFixture { image_ref: String, target_score: u8 },
    #[error("invalid fixture: {0}")]
    InvalidFixture(String),
    #[error("oracle request timed out: {0}")]
    Timeout(String),
    #[error("oracle transport error: {0}")]
    TransportError(String),
    #[error("oracle protocol error: {0}")]
    ProtocolError(String),
    #[error("validation error: {0}")]
    ValidationError(String),
}

/// A relevance judgment on the 1-5 scale used by the scoring prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct LogicalScore(u8);

impl LogicalScore {
    pub const MIN: LogicalScore = LogicalScore(1);
    pub const MAX: LogicalScore = LogicalScore(5);

    pub fn new(value: i64) -> Option<Self> {
        (1..=5).contains(&value).then_some(LogicalScore(value as u8))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Maps 1..=5 onto [0, 1].
    pub fn unit(self) -> f64 {
        f64::from(self.0 - 1) / 4.0
    }

    pub fn all() -> impl Iterator<Item = LogicalScore> {
        (1..=5).map(LogicalScore)
    }
}

impl TryFrom<i64> for LogicalScore {
    type Error = String;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        LogicalScore::new(value).ok_or_else(|| format!("score {value} outside 1..=5"))
    }
}

impl From<LogicalScore> for u8 {
    fn from(s: LogicalScore) -> u8 {
        s.0
    }
}

impl fmt::Display for LogicalScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Reference to a page image; the image itself is resolved by the sidecar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageRef {
    pub doc_id: String,
    pub page_id: usize,
    pub image_ref: String,
}

impl PageRef {
    /// Default image reference layout: `<doc_id>/<page_id>`.
    pub fn new(doc_id: &str, page_id: usize) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            page_id,
            image_ref: format!("{doc_id}/{page_id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleRequest {
    pub query_id: String,
    pub query_text: String,
    pub page: PageRef,
}

/// Body of `POST /score`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreWireRequest {
    pub query_id: String,
    pub query_text: String,
    pub doc_id: String,
    pub page_id: usize,
    pub image_ref: String,
}

impl From<&OracleRequest> for ScoreWireRequest {
    fn from(req: &OracleRequest) -> Self {
        Self {
            query_id: req.query_id.clone(),
            query_text: req.query_text.clone(),
            doc_id: req.page.doc_id.clone(),
            page_id: req.page.page_id,
            image_ref: req.page.image_ref.clone(),
        }
    }
}

/// Request body of `POST /generate`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenRequest {
    pub image_ref: String,
    pub target_score: LogicalScore,
    pub focus: Option<String>,
}

/// Response body of `POST /generate`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenResponse {
    pub query: String,
    pub relevance_score: LogicalScore,
    pub answer: String,
}

impl GenResponse {
    fn validate(self) -> Result<Self, OracleError> {
        if self.query.trim().is_empty() || self.answer.trim().is_empty() {
            return Err(OracleError::ProtocolError(
                "generation response has an empty query or answer".into(),
            ));
        }
        Ok(self)
    }
}

/// Judges how well a page answers a question.
pub trait LogicalOracle: Send + Sync {
    fn score(&self, req: &OracleRequest) -> Result<LogicalScore, OracleError>;
}

/// Writes a question for a page at a requested relevance level.
pub trait GenOracle: Send + Sync {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, OracleError>;
}

impl<T: LogicalOracle + ?Sized> LogicalOracle for &T {
    fn score(&self, req: &OracleRequest) -> Result<LogicalScore, OracleError> {
        (**self).score(req)
    }
}

impl<T: LogicalOracle + ?Sized> LogicalOracle for Box<T> {
    fn score(&self, req: &OracleRequest) -> Result<LogicalScore, OracleError> {
        (**self).score(req)
    }
}

impl<T: GenOracle + ?Sized> GenOracle for &T {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, OracleError> {
        (**self).generate(req)
    }
}

impl<T: GenOracle + ?Sized> GenOracle for Box<T> {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, OracleError> {
        (**self).generate(req)
    }
}

// ---------------------------------------------------------------------------
// Mock oracles
// ---------------------------------------------------------------------------

/// One line of a score fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub query_id: String,
    pub page_id: usize,
    pub score: LogicalScore,
}

/// Table-driven scorer. Lookups of unknown `(query_id, page_id)` pairs fail.
#[derive(Debug, Clone, Default)]
pub struct MockOracle {
    table: HashMap<(String, usize), LogicalScore>,
}

impl MockOracle {
    pub fn from_entries(
        entries: impl IntoIterator<Item = FixtureEntry>,
    ) -> Result<Self, OracleError> {
        let mut table = HashMap::new();
        for e in entries {
            let key = (e.query_id, e.page_id);
            if let Some(prev) = table.insert(key.clone(), e.score) {
                if prev != e.score {
                    return Err(OracleError::InvalidFixture(format!(
                        "conflicting scores for query {:?}, page {}",
                        key.0, key.1
                    )));
                }
            }
        }
        Ok(Self { table })
    }

    pub fn load(path: &Path) -> Result<Self, OracleError> {
        let entries: Vec<FixtureEntry> = read_jsonl(path)
            .map_err(|e| OracleError::InvalidFixture(format!("{}: {e}", path.display())))?;
        Self::from_entries(entries)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn lookup(&self, query_id: &str, page_id: usize) -> Result<LogicalScore, OracleError> {
        self.table
            .get(&(query_id.to_string(), page_id))
            .copied()
            .ok_or_else(|| OracleError::MissingFixtureEntry {
                query_id: query_id.to_string(),
                page_id,
            })
    }
}

impl LogicalOracle for MockOracle {
    fn score(&self, req: &OracleRequest) -> Result<LogicalScore, OracleError> {
        self.lookup(&req.query_id, req.page.page_id)
    }
}

/// One line of a generation fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenFixtureEntry {
    pub image_ref: String,
    pub target_score: LogicalScore,
    pub query: String,
    pub relevance_score: LogicalScore,
    pub answer: String,
}

/// Generation double keyed by `(image_ref, target_score)`.
#[derive(Debug, Clone, Default)]
pub struct MockGenOracle {
    table: HashMap<(String, LogicalScore), GenResponse>,
}

impl MockGenOracle {
    pub fn from_entries(entries: impl IntoIterator<Item = GenFixtureEntry>) -> Self {
        let table = entries
            .into_iter()
            .map(|e| {
                (
                    (e.image_ref, e.target_score),
                    GenResponse {
                        query: e.query,
                        relevance_score: e.relevance_score,
                        answer: e.answer,
                    },
                )
            })
            .collect();
        Self { table }
    }

    pub fn load(path: &Path) -> Result<Self, OracleError> {
        let entries: Vec<GenFixtureEntry> = read_jsonl(path)
            .map_err(|e| OracleError::InvalidFixture(format!("{}: {e}", path.display())))?;
        Ok(Self::from_entries(entries))
    }
}

impl GenOracle for MockGenOracle {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, OracleError> {
        self.table
            .get(&(req.image_ref.clone(), req.target_score))
            .cloned()
            .ok_or_else(|| OracleError::MissingGenFixture {
                image_ref: req.image_ref.clone(),
                target_score: req.target_score.value(),
            })?
            .validate()
    }
}

// ---------------------------------------------------------------------------
// HTTP client
// ---------------------------------------------------------------------------

/// Bounded exponential backoff: attempt `n` (0-based) is followed by a
/// `base_delay * 2^n` sleep before the next one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(100),
        }
    }
}

impl RetryPolicy {
    pub fn delay_after(&self, attempt: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << attempt.min(16))
    }
}

enum Failure {
    Retryable(OracleError),
    Fatal(OracleError),
}

/// Client for the sidecar's `/score` and `/generate` endpoints.
#[derive(Debug, Clone)]
pub struct HttpOracle {
    endpoint: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl HttpOracle {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, retry: RetryPolicy) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            agent,
            retry,
        }
    }

    /// Client with a 30 s timeout and the default retry policy.
    pub fn with_defaults(endpoint: impl Into<String>) -> Self {
        Self::new(endpoint, Duration::from_secs(30), RetryPolicy::default())
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn post<B: Serialize>(&self, route: &str, body: &B) -> Result<String, OracleError> {
        let url = format!("{}/{route}", self.endpoint);
        let attempts = self.retry.attempts.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            match self.post_once(&url, body) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(e)) => {
                    log::debug!("{url}: attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                    if attempt + 1 < attempts {
                        thread::sleep(self.retry.delay_after(attempt));
                    }
                }
            }
        }
        Err(last.expect("at least one attempt was made"))
    }

    fn post_once<B: Serialize>(&self, url: &str, body: &B) -> Result<String, Failure> {
        let mut resp = self.agent.post(url).send_json(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => Failure::Retryable(OracleError::Timeout(e.to_string())),
            other => Failure::Retryable(OracleError::TransportError(other.to_string())),
        })?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(_) => Failure::Retryable(OracleError::Timeout(e.to_string())),
            other => Failure::Retryable(OracleError::TransportError(other.to_string())),
        })?;
        match status {
            200..=299 => Ok(text),
            500..=599 => Err(Failure::Retryable(OracleError::TransportError(format!(
                "{url} returned {status}: {text}"
            )))),
            _ => Err(Failure::Fatal(OracleError::ProtocolError(format!(
                "{url} returned {status}: {text}"
            )))),
        }
    }
}

#[derive(Deserialize)]
struct ScoreWireResponse {
    score: serde_json::Value,
}

/// Parses a `/score` response body. The score must be a JSON integer in 1..=5.
pub fn parse_score_response(body: &str) -> Result<LogicalScore, OracleError> {
    let resp: ScoreWireResponse = serde_json::from_str(body)
        .map_err(|e| OracleError::ProtocolError(format!("bad score response {body:?}: {e}")))?;
    let value = resp.score.as_i64().ok_or_else(|| {
        OracleError::ProtocolError(format!("score {} is not an integer", resp.score))
    })?;
    LogicalScore::new(value)
        .ok_or_else(|| OracleError::ProtocolError(format!("score {value} outside 1..=5")))
}

/// Parses a `/generate` response body.
pub fn parse_gen_response(body: &str) -> Result<GenResponse, OracleError> {
    let resp: GenResponse = serde_json::from_str(body)
        .map_err(|e| OracleError::ProtocolError(format!("bad generate response {body:?}: {e}")))?;
    resp.validate()
}

impl LogicalOracle for HttpOracle {
    fn score(&self, req: &OracleRequest) -> Result<LogicalScore, OracleError> {
        let body = self.post("score", &ScoreWireRequest::from(req))?;
        parse_score_response(&body)
    }
}

impl GenOracle for HttpOracle {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, OracleError> {
        let body = self.post("generate", req)?;
        parse_gen_response(&body)
    }
}

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

const SCORING_PROMPT_HEAD: &str = "# GOAL #
You are an Retrieval Expert, and your task is to evaluate how relevant the input document page is to the given query. Rate the relevance on a scale of 1 to 5, where:
5 Highly relevant - contains complete information needed to answer the query
4 Very relevant - contains most of the information needed
3 Moderately relevant - contains some useful information
2 Slightly relevant - has minor connection to the query
1 Irrelevant - contains no information related to the query

# INSTRUCTION #
Please first read the given query, think about what knowledge is required to answer that query, and then carefully go through the document snapshot for judgment.

# QUERY #
";

const SCORING_PROMPT_TAIL: &str = "
Please generate just a single number (1-5) representing your relevance judgment. Your answer should be a single number without any extra contents.";

/// The scoring template with its `{{Question}}` slot left in place.
pub fn scoring_prompt_template() -> String {
    format!("{SCORING_PROMPT_HEAD}{{{{Question}}}}{SCORING_PROMPT_TAIL}")
}

/// Renders the logical-relevance prompt for `query_text`.
pub fn render_scoring_prompt(query_text: &str) -> Result<String, OracleError> {
    if query_text.trim().is_empty() {
        return Err(OracleError::ValidationError("query text is empty".into()));
    }
    Ok(format!(
        "{SCORING_PROMPT_HEAD}{query_text}{SCORING_PROMPT_TAIL}"
    ))
}

/// Substituted for `{{focus}}` when no focus is requested.
pub const DEFAULT_FOCUS: &str = "any element of the page";

/// Renders the training-question generation prompt.
pub fn render_generation_prompt(target_score: LogicalScore, focus: Option<&str>) -> String {
    let s = target_score.value();
    let focus = focus
        .filter(|f| !f.trim().is_empty())
        .unwrap_or(DEFAULT_FOCUS);
    format!(
        "# GOAL #
Given the input image, your task is to generate a question related to it. The relevance score is {s}, where a higher score indicates a closer connection between the question and the image. For example, a relevance score of 5 means the answer is DIRECTLY contained in the image, while a score below 3 indicates that the answer CANNOT be derived from it, with lower scores signifying less relevance.

# REQUIREMENT #
The question must be based on the content of the input image, except when the relevance score is <= 2. For relevance scores of 4 or higher, create clear and straightforward questions with answers that are explicitly present in the image. For relevance scores of 3, generate questions that may require some inference but are still somewhat related to the content. For relevance scores of 2 or lower, formulate questions that are unanswerable based on the snapshot.
You may consider various elements, including text, layout, and figures. For this generation, please concentrate on {focus} if applicable and remember that the relevance score is {s}.

Your output should be formatted as follows:
{{ \"query\": \"Your generated question\", \"relevance_score\": \"relevance score\", \"answer\": \"Corresponding answer or inference\" }}"
    )
}
