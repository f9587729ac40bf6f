//! Multi-vector page and query embeddings.
//!
//! A page is a bag of `k` token vectors of dimension `d` (the output of a
//! ColPali-style document encoder). Rows are L2-normalized on ingest, so every
//! score computed here lies in `[-1, 1]`.
//!
//! Two on-disk encodings are supported:
//!
//! * `MVE1` binary: magic `b"MVE1"`, `u32` LE page count, `u32` LE dimension,
//!   then per page a `u32` LE token count followed by `k * d` `f32` LE values
//!   in row-major order.
//! * JSON: `{"doc_id": str, "d": int, "pages": [{"page_id": int, "vectors": [[f64, ..], ..]}]}`.
//!
//! Query files reuse both encodings with one entry per query.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Magic bytes opening every binary embedding file.
pub const MAGIC: [u8; 4] = *b"MVE1";

/// Rows whose L2 norm falls below this are rejected at ingest.
pub const MIN_ROW_NORM: f64 = 1e-12;

/// Rows already this close to unit length are stored as given, so that
/// re-encoding a unit-row binary file reproduces it byte for byte.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("malformed embedding file: {0}")]
    MalformedFile(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("degenerate vector in entry {entry}, row {row} (norm {norm:e})")]
    DegenerateVector { entry: usize, row: usize, norm: f64 },
    #[error("non-finite value in entry {entry}, row {row}")]
    NonFinite { entry: usize, row: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = EmbeddingError> = std::result::Result<T, E>;

/// On-disk encoding of an embedding file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Binary,
    Json,
}

impl Format {
    /// Guesses the format from the file extension; anything other than
    /// `.json` is treated as binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Binary,
        }
    }
}

/// A `k x d` matrix of unit-norm rows, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiVector {
    dim: usize,
    data: Vec<f64>,
}

impl MultiVector {
    /// Validates and L2-normalizes `rows`.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::from_rows_at(rows, 0)
    }

    fn from_rows_at<R: AsRef<[f64]>>(rows: &[R], entry: usize) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| EmbeddingError::MalformedFile(format!("entry {entry} has no rows")))?;
        let dim = first.as_ref().len();
        if dim == 0 {
            return Err(EmbeddingError::MalformedFile(format!(
                "entry {entry} has zero-dimensional rows"
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (row_idx, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            push_normalized(&mut data, row, entry, row_idx)?;
        }
        Ok(Self { dim, data })
    }

    /// Builds from a flat row-major buffer, validating and normalizing rows.
    fn from_flat(flat: &[f64], dim: usize, entry: usize) -> Result<Self> {
        debug_assert!(dim > 0 && flat.len().is_multiple_of(dim));
        let mut data = Vec::with_capacity(flat.len());
        for (row_idx, row) in flat.chunks_exact(dim).enumerate() {
            push_normalized(&mut data, row, entry, row_idx)?;
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of token rows (`k`).
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }
}

fn push_normalized(out: &mut Vec<f64>, row: &[f64], entry: usize, row_idx: usize) -> Result<()> {
    if row.iter().any(|x| !x.is_finite()) {
        return Err(EmbeddingError::NonFinite {
            entry,
            row: row_idx,
        });
    }
    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < MIN_ROW_NORM {
        return Err(EmbeddingError::DegenerateVector {
            entry,
            row: row_idx,
            norm,
        });
    }
    if (norm - 1.0).abs() <= UNIT_TOLERANCE {
        out.extend_from_slice(row);
    } else {
        out.extend(row.iter().map(|x| x / norm));
    }
    Ok(())
}

/// One page's token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct PageEmbedding {
    pub page_id: usize,
    pub vectors: MultiVector,
}

/// One query's token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEmbedding {
    pub query_id: String,
    pub vectors: MultiVector,
}

/// All pages of one document, indexed `0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    doc_id: String,
    dim: usize,
    pages: Vec<PageEmbedding>,
}

impl EmbeddingStore {
    /// Assembles a store from per-page matrices; page ids are assigned by position.
    pub fn new(doc_id: impl Into<String>, pages: Vec<MultiVector>) -> Result<Self> {
        let dim = pages
            .first()
            .map(MultiVector::dim)
            .ok_or_else(|| EmbeddingError::MalformedFile("store has no pages".into()))?;
        if let Some(bad) = pages.iter().find(|p| p.dim() != dim) {
            return Err(EmbeddingError::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        let pages = pages
            .into_iter()
            .enumerate()
            .map(|(page_id, vectors)| PageEmbedding { page_id, vectors })
            .collect();
        Ok(Self {
            doc_id: doc_id.into(),
            dim,
            pages,
        })
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn pages(&self) -> &[PageEmbedding] {
        &self.pages
    }

    pub fn page(&self, page_id: usize) -> Option<&PageEmbedding> {
        self.pages.get(page_id)
    }
}

/// Mean over query rows of the best dot product against any page row.
///
/// Both inputs are assumed unit-normalized, so the result lies in `[-1, 1]`.
pub fn maxsim(query: &MultiVector, doc: &MultiVector) -> Result<f64> {
    if query.dim() != doc.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: doc.dim(),
            found: query.dim(),
        });
    }
    let total: f64 = query
        .rows()
        .map(|q| {
            doc.rows()
                .map(|p| dot(q, p))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    // rounding can push unit-row dot products a hair past 1
    Ok((total / query.len() as f64).clamp(-1.0, 1.0))
}

/// Late-interaction semantic relevance of a page to a query.
pub fn query_page_score(q: &QueryEmbedding, p: &PageEmbedding) -> Result<f64> {
    maxsim(&q.vectors, &p.vectors)
}

/// Symmetrized MaxSim between two pages: the mean of both directed scores.
///
/// Two-term float addition commutes exactly, so `sim(a, b) == sim(b, a)`
/// bit-for-bit.
pub fn page_page_similarity(a: &PageEmbedding, b: &PageEmbedding) -> Result<f64> {
    let ab = maxsim(&a.vectors, &b.vectors)?;
    let ba = maxsim(&b.vectors, &a.vectors)?;
    Ok(0.5 * (ab + ba))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Raw entries of an embedding file before validation.
struct RawFile {
    doc_id: Option<String>,
    dim: usize,
    entries: Vec<RawEntry>,
}

struct RawEntry {
    id: Option<String>,
    flat: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JsonFile {
    doc_id: String,
    d: usize,
    pages: Vec<JsonEntry>,
}

#[derive(Serialize, Deserialize)]
struct JsonEntry {
    page_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    query_id: Option<String>,
    vectors: Vec<Vec<f64>>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_binary(bytes: &[u8]) -> Result<RawFile> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4)?;
    if magic != MAGIC {
        return Err(EmbeddingError::MalformedFile(format!(
            "bad magic {magic:02x?}"
        )));
    }
    let n = cur.u32()? as usize;
    let dim = cur.u32()? as usize;
    if dim == 0 {
        return Err(EmbeddingError::MalformedFile("dimension is zero".into()));
    }
    let mut entries = Vec::with_capacity(n.min(1 << 16));
    for i in 0..n {
        let k = cur.u32()? as usize;
        if k == 0 {
            return Err(EmbeddingError::MalformedFile(format!(
                "entry {i} has k = 0"
            )));
        }
        let len = k
            .checked_mul(dim)
            .and_then(|x| x.checked_mul(4))
            .ok_or_else(|| EmbeddingError::MalformedFile(format!("entry {i} size overflow")))?;
        let raw = cur.take(len)?;
        let flat = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        entries.push(RawEntry { id: None, flat });
    }
    if cur.pos != bytes.len() {
        return Err(EmbeddingError::MalformedFile(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    Ok(RawFile {
        doc_id: None,
        dim,
        entries,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                EmbeddingError::MalformedFile(format!("truncated at byte {}", self.pos))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn parse_json(bytes: &[u8]) -> Result<RawFile> {
    let file: JsonFile =
        serde_json::from_slice(bytes).map_err(|e| EmbeddingError::MalformedFile(e.to_string()))?;
    if file.d == 0 {
        return Err(EmbeddingError::MalformedFile("dimension is zero".into()));
    }
    let mut entries = Vec::with_capacity(file.pages.len());
    for (pos, entry) in file.pages.into_iter().enumerate() {
        if entry.page_id != pos {
            return Err(EmbeddingError::MalformedFile(format!(
                "page_id {} at position {pos}; ids must be 0..N in order",
                entry.page_id
            )));
        }
        if entry.vectors.is_empty() {
            return Err(EmbeddingError::MalformedFile(format!(
                "entry {pos} has no rows"
            )));
        }
        let mut flat = Vec::with_capacity(entry.vectors.len() * file.d);
        for row in &entry.vectors {
            if row.len() != file.d {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: file.d,
                    found: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        entries.push(RawEntry {
            id: entry.query_id,
            flat,
        });
    }
    Ok(RawFile {
        doc_id: Some(file.doc_id),
        dim: file.d,
        entries,
    })
}

fn parse(path: &Path, format: Format) -> Result<RawFile> {
    let bytes = read_bytes(path)?;
    match format {
        Format::Binary => parse_binary(&bytes),
        Format::Json => parse_json(&bytes),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("doc")
        .to_string()
}

/// Loads a page store. Binary files carry no document id, so the file stem is used.
pub fn load_store(path: &Path, format: Format) -> Result<EmbeddingStore> {
    let raw = parse(path, format)?;
    store_from_raw(raw, || stem(path))
}

/// Parses a page store from in-memory bytes.
pub fn store_from_bytes(bytes: &[u8], format: Format, doc_id: &str) -> Result<EmbeddingStore> {
    let raw = match format {
        Format::Binary => parse_binary(bytes)?,
        Format::Json => parse_json(bytes)?,
    };
    store_from_raw(raw, || doc_id.to_string())
}

fn store_from_raw(raw: RawFile, default_id: impl FnOnce() -> String) -> Result<EmbeddingStore> {
    if raw.entries.is_empty() {
        return Err(EmbeddingError::MalformedFile("store has no pages".into()));
    }
    let pages = raw
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| MultiVector::from_flat(&e.flat, raw.dim, i))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingStore::new(raw.doc_id.unwrap_or_else(default_id), pages)
}

/// Loads query embeddings. Binary entries are named `q0, q1, ..`; JSON entries
/// use their `query_id` field when present and fall back to the same scheme.
pub fn load_queries(path: &Path, format: Format) -> Result<Vec<QueryEmbedding>> {
    let raw = parse(path, format)?;
    raw.entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            Ok(QueryEmbedding {
                query_id: e.id.unwrap_or_else(|| format!("q{i}")),
                vectors: MultiVector::from_flat(&e.flat, raw.dim, i)?,
            })
        })
        .collect()
}

/// Encodes matrices as an `MVE1` binary blob (values rounded to `f32`).
pub fn encode_binary<'a, I>(dim: usize, entries: I) -> Vec<u8>
where
    I: IntoIterator<Item = &'a MultiVector>,
    I::IntoIter: ExactSizeIterator,
{
    let entries = entries.into_iter();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for mv in entries {
        out.extend_from_slice(&(mv.len() as u32).to_le_bytes());
        for x in &mv.data {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    out
}

/// Encodes matrices in the JSON layout. `ids` supplies optional query ids.
pub fn encode_json<'a>(
    doc_id: &str,
    dim: usize,
    entries: impl IntoIterator<Item = (Option<&'a str>, &'a MultiVector)>,
) -> Vec<u8> {
    let pages = entries
        .into_iter()
        .enumerate()
        .map(|(page_id, (id, mv))| JsonEntry {
            page_id,
            query_id: id.map(str::to_string),
            vectors: mv.rows().map(<[f64]>::to_vec).collect(),
        })
        .collect();
    let file = JsonFile {
        doc_id: doc_id.to_string(),
        d: dim,
        pages,
    };
    serde_json::to_vec(&file).expect("embedding JSON serialization is infallible")
}

impl EmbeddingStore {
    pub fn to_binary(&self) -> Vec<u8> {
        encode_binary(self.dim, self.pages.iter().map(|p| &p.vectors))
    }

    pub fn to_json(&self) -> Vec<u8> {
        encode_json(
            &self.doc_id,
            self.dim,
            self.pages.iter().map(|p| (None, &p.vectors)),
        )
    }
}

/// Encodes queries in the given format.
pub fn encode_queries(doc_id: &str, queries: &[QueryEmbedding], format: Format) -> Vec<u8> {
    let dim = queries.first().map_or(0, |q| q.vectors.dim());
    match format {
        Format::Binary => encode_binary(dim, queries.iter().map(|q| &q.vectors)),
        Format::Json => encode_json(
            doc_id,
            dim,
            queries
                .iter()
                .map(|q| (Some(q.query_id.as_str()), &q.vectors)),
        ),
    }
}
