//! Item pools, embedding matrices, and the embeddings HTTP client.
//!
//! Pool files are CSV (`id,text,dimension`) or JSONL (`{"id","text","dimension"}`),
//! chosen by extension. A CSV pool may start with a `# dimensions: a,b,c` line that
//! fixes the dimension order and restricts the allowed labels; a JSONL pool may do the
//! same with a leading `{"dimensions": [...]}` object. Without a declaration the
//! dimension order is the order of first appearance.
//!
//! Embedding files are CSV (`id,e0,e1,...`) or JSONL (`{"id":…,"embedding":[…]}`).

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::walktrap::Partition;

/// Smallest number of items a dimension may hold.
pub const MIN_ITEMS_PER_DIMENSION: usize = 3;
/// Smallest embedding width accepted (the shallowest depth of the sweep grid).
pub const MIN_EMBEDDING_WIDTH: usize = 3;
/// Items per embeddings request.
pub const FETCH_BATCH_SIZE: usize = 64;
/// Attempts per batch before giving up on a rate-limited or failing endpoint.
pub const FETCH_MAX_ATTEMPTS: u32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate item id {0:?}")]
    DuplicateItemId(String),
    #[error("item {id:?} has label {label:?} which is not a declared dimension")]
    UndeclaredDimension { id: String, label: String },
    #[error("pool must contain at least 2 dimensions, found {0}")]
    TooFewDimensions(usize),
    #[error("dimension {name:?} has {count} items, at least {MIN_ITEMS_PER_DIMENSION} required")]
    TooFewItems { name: String, count: usize },
    #[error("embedding row for id {0:?} has no matching pool item")]
    ExtraId(String),
    #[error("pool item {0:?} has no embedding row")]
    MissingId(String),
    #[error("ragged row at line {line}: expected {expected} values, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("embedding width {0} is below the minimum of {MIN_EMBEDDING_WIDTH}")]
    TooNarrow(usize),
    #[error("embedding matrix has {rows} rows but {ids} item ids")]
    RowCountMismatch { rows: usize, ids: usize },
    #[error("embedding for item {id:?} has width {found}, expected {expected}")]
    InconsistentDimension {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("HTTP {status} from embeddings endpoint: {excerpt}")]
    Http { status: u16, excerpt: String },
    #[error("transport error talking to embeddings endpoint: {0}")]
    Transport(String),
    #[error("embeddings endpoint still failing after {attempts} attempts (last status {last_status})")]
    RetryExhausted { attempts: u32, last_status: u16 },
    #[error("malformed embeddings response: {0}")]
    BadResponse(String),
    #[error("API key is empty")]
    EmptyApiKey,
}

type Result<T> = std::result::Result<T, IngestError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> IngestError {
    IngestError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn is_jsonl(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("ndjson")
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub text: String,
    #[serde(rename = "dimension")]
    pub dimension_label: String,
}

/// Item texts with their ground-truth dimension labels, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemPool {
    items: Vec<Item>,
    dimension_names: Vec<String>,
}

impl ItemPool {
    /// Validates and builds a pool. `declared` fixes the dimension order when given.
    pub fn new(items: Vec<Item>, declared: Option<Vec<String>>) -> Result<Self> {
        let mut seen = HashSet::new();
        for item in &items {
            if !seen.insert(item.id.as_str()) {
                return Err(IngestError::DuplicateItemId(item.id.clone()));
            }
        }
        let dimension_names = match declared {
            Some(names) => {
                for item in &items {
                    if !names.contains(&item.dimension_label) {
                        return Err(IngestError::UndeclaredDimension {
                            id: item.id.clone(),
                            label: item.dimension_label.clone(),
                        });
                    }
                }
                names
            }
            None => {
                let mut names: Vec<String> = Vec::new();
                for item in &items {
                    if !names.contains(&item.dimension_label) {
                        names.push(item.dimension_label.clone());
                    }
                }
                names
            }
        };
        if dimension_names.len() < 2 {
            return Err(IngestError::TooFewDimensions(dimension_names.len()));
        }
        for name in &dimension_names {
            let count = items.iter().filter(|i| &i.dimension_label == name).count();
            if count < MIN_ITEMS_PER_DIMENSION {
                return Err(IngestError::TooFewItems {
                    name: name.clone(),
                    count,
                });
            }
        }
        Ok(Self {
            items,
            dimension_names,
        })
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn dimension_names(&self) -> &[String] {
        &self.dimension_names
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.id.clone()).collect()
    }

    /// Items per dimension when the pool is balanced.
    pub fn items_per_dimension(&self) -> Option<usize> {
        let counts: Vec<usize> = self
            .dimension_names
            .iter()
            .map(|n| {
                self.items
                    .iter()
                    .filter(|i| &i.dimension_label == n)
                    .count()
            })
            .collect();
        counts
            .windows(2)
            .all(|w| w[0] == w[1])
            .then(|| counts[0])
    }

    /// Ground-truth partition, with community ids following `dimension_names`.
    pub fn truth(&self) -> Partition {
        let labels = self
            .items
            .iter()
            .map(|item| {
                self.dimension_names
                    .iter()
                    .position(|n| n == &item.dimension_label)
                    .expect("validated label")
            })
            .collect();
        Partition::from_labels(labels)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "# dimensions: {}", self.dimension_names.join(",")).unwrap();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(["id", "text", "dimension"]).unwrap();
            for item in &self.items {
                w.write_record([&item.id, &item.text, &item.dimension_label])
                    .unwrap();
            }
            w.flush().unwrap();
        }
        fs::write(path, out).map_err(io_err(path))
    }
}

/// Loads an item pool from CSV or JSONL, preserving file order.
pub fn load_item_pool(path: &Path) -> Result<ItemPool> {
    let content = fs::read_to_string(path).map_err(io_err(path))?;
    if is_jsonl(path) {
        parse_pool_jsonl(path, &content)
    } else {
        parse_pool_csv(path, &content)
    }
}

fn parse_pool_csv(path: &Path, content: &str) -> Result<ItemPool> {
    let mut declared = None;
    let mut skip = 0;
    for line in content.lines() {
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some(list) = rest.trim().strip_prefix("dimensions:") {
                declared = Some(
                    list.split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect::<Vec<_>>(),
                );
            }
            skip += 1;
        } else {
            break;
        }
    }
    let body: String = content
        .lines()
        .skip(skip)
        .map(|l| format!("{l}\n"))
        .collect();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(body.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, skip + 1, e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| parse_err(path, skip + 1, format!("missing column {name:?}")))
    };
    let (id_col, text_col, dim_col) = (col("id")?, col("text")?, col("dimension")?);
    let mut items = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0) + skip;
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0) + skip;
        let field = |i: usize| {
            record
                .get(i)
                .map(|s| s.to_string())
                .ok_or_else(|| parse_err(path, line, "missing field"))
        };
        let id = field(id_col)?.trim().to_string();
        if id.is_empty() {
            return Err(parse_err(path, line, "empty id"));
        }
        items.push(Item {
            id,
            text: field(text_col)?,
            dimension_label: field(dim_col)?.trim().to_string(),
        });
    }
    ItemPool::new(items, declared)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PoolLine {
    Header { dimensions: Vec<String> },
    Item(Item),
}

fn parse_pool_jsonl(path: &Path, content: &str) -> Result<ItemPool> {
    let mut declared = None;
    let mut items = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PoolLine =
            serde_json::from_str(line).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        match parsed {
            PoolLine::Header { dimensions } if items.is_empty() && declared.is_none() => {
                declared = Some(dimensions)
            }
            PoolLine::Header { .. } => {
                return Err(parse_err(path, i + 1, "dimension header must come first"))
            }
            PoolLine::Item(item) => items.push(item),
        }
    }
    ItemPool::new(items, declared)
}

/// `p` items by `D` embedding coordinates. Row `i` belongs to `item_ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    item_ids: Vec<String>,
    coords: DMatrix<f64>,
}

impl EmbeddingMatrix {
    pub fn new(item_ids: Vec<String>, coords: DMatrix<f64>) -> Result<Self> {
        if coords.nrows() != item_ids.len() {
            return Err(IngestError::RowCountMismatch {
                rows: coords.nrows(),
                ids: item_ids.len(),
            });
        }
        if coords.ncols() < MIN_EMBEDDING_WIDTH {
            return Err(IngestError::TooNarrow(coords.ncols()));
        }
        for row in 0..coords.nrows() {
            for col in 0..coords.ncols() {
                if !coords[(row, col)].is_finite() {
                    return Err(IngestError::NonFiniteValue { row, col });
                }
            }
        }
        Ok(Self { item_ids, coords })
    }

    pub fn from_rows(item_ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.len());
        for (i, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(IngestError::RaggedRow {
                    line: i + 1,
                    expected: width,
                    found: r.len(),
                });
            }
        }
        let coords = DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]);
        Self::new(item_ids, coords)
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn coords(&self) -> &DMatrix<f64> {
        &self.coords
    }

    pub fn n_items(&self) -> usize {
        self.coords.nrows()
    }

    /// Total embedding dimensionality `D`.
    pub fn depth(&self) -> usize {
        self.coords.ncols()
    }

    pub fn row(&self, item: usize) -> Vec<f64> {
        self.coords.row(item).iter().copied().collect()
    }

    /// Native CSV layout: header `id,e0,e1,...`, one row per item.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.coords.len() * 20);
        out.push_str("id");
        for j in 0..self.depth() {
            out.push_str(&format!(",e{j}"));
        }
        out.push('\n');
        for (i, id) in self.item_ids.iter().enumerate() {
            out.push_str(&csv_escape(id));
            for j in 0..self.depth() {
                out.push(',');
                out.push_str(&format!("{:?}", self.coords[(i, j)]));
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(io_err(path))
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (i, id) in self.item_ids.iter().enumerate() {
            let line = serde_json::json!({ "id": id, "embedding": self.row(i) });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        fs::write(path, out).map_err(io_err(path))
    }
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Loads an embeddings file and reorders its rows into pool order.
pub fn load_embeddings(path: &Path, pool: &ItemPool) -> Result<EmbeddingMatrix> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let rows = if is_jsonl(path) {
        read_embeddings_jsonl(path, BufReader::new(file))?
    } else {
        read_embeddings_csv(path, BufReader::new(file))?
    };
    align_rows(rows, pool)
}

struct RawRow {
    id: String,
    line: usize,
    values: Vec<f64>,
}

fn read_embeddings_csv(path: &Path, reader: impl BufRead) -> Result<Vec<RawRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    if headers.get(0).map(str::trim) != Some("id") {
        return Err(parse_err(path, 1, "first column must be \"id\""));
    }
    let width = headers.len() - 1;
    let mut rows = Vec::new();
    for (row_idx, record) in reader.into_records().enumerate() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                if let csv::ErrorKind::UnequalLengths {
                    pos, len, expected_len, ..
                } = e.kind()
                {
                    return Err(IngestError::RaggedRow {
                        line: pos.as_ref().map_or(row_idx + 2, |p| p.line() as usize),
                        expected: *expected_len as usize - 1,
                        found: *len as usize - 1,
                    });
                }
                return Err(parse_err(path, row_idx + 2, e.to_string()));
            }
        };
        let line = record.position().map_or(row_idx + 2, |p| p.line() as usize);
        let mut values = Vec::with_capacity(width);
        for (col, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                parse_err(path, line, format!("column {col}: cannot parse {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(IngestError::NonFiniteValue { row: row_idx, col });
            }
            values.push(v);
        }
        rows.push(RawRow {
            id: record[0].trim().to_string(),
            line,
            values,
        });
    }
    Ok(rows)
}

#[derive(Deserialize)]
struct EmbeddingLine {
    id: String,
    embedding: Vec<Option<f64>>,
}

fn read_embeddings_jsonl(path: &Path, reader: impl BufRead) -> Result<Vec<RawRow>> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: EmbeddingLine =
            serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        let row_idx = rows.len();
        let mut values = Vec::with_capacity(parsed.embedding.len());
        for (col, v) in parsed.embedding.into_iter().enumerate() {
            // JSON has no NaN literal; serde maps `null` to None.
            match v {
                Some(v) if v.is_finite() => values.push(v),
                _ => return Err(IngestError::NonFiniteValue { row: row_idx, col }),
            }
        }
        rows.push(RawRow {
            id: parsed.id,
            line: i + 1,
            values,
        });
    }
    Ok(rows)
}

fn align_rows(rows: Vec<RawRow>, pool: &ItemPool) -> Result<EmbeddingMatrix> {
    let width = rows.first().map_or(0, |r| r.values.len());
    for r in &rows {
        if r.values.len() != width {
            return Err(IngestError::RaggedRow {
                line: r.line,
                expected: width,
                found: r.values.len(),
            });
        }
    }
    let mut by_id: HashMap<String, Vec<f64>> = HashMap::with_capacity(rows.len());
    for r in rows {
        if !pool.items().iter().any(|i| i.id == r.id) {
            return Err(IngestError::ExtraId(r.id));
        }
        if by_id.insert(r.id.clone(), r.values).is_some() {
            return Err(IngestError::DuplicateItemId(r.id));
        }
    }
    let mut ordered = Vec::with_capacity(pool.len());
    for item in pool.items() {
        match by_id.remove(&item.id) {
            Some(v) => ordered.push(v),
            None => return Err(IngestError::MissingId(item.id.clone())),
        }
    }
    EmbeddingMatrix::from_rows(pool.ids(), &ordered)
}

/// Counters from one [`EmbeddingClient::fetch`] call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FetchStats {
    pub requests: usize,
    pub retries: usize,
    pub cache_hits: usize,
}

/// Client for an OpenAI-compatible `POST {endpoint}/embeddings` API with an on-disk cache.
#[derive(Debug, Clone)]
pub struct EmbeddingClient {
    endpoint: String,
    model: String,
    api_key: String,
    cache_dir: Option<PathBuf>,
    batch_size: usize,
    max_attempts: u32,
    base_backoff: Duration,
    timeout: Duration,
}

impl EmbeddingClient {
    pub fn new(endpoint: &str, model: &str, api_key: &str) -> Result<Self> {
        if api_key.trim().is_empty() {
            return Err(IngestError::EmptyApiKey);
        }
        Ok(Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key: api_key.to_string(),
            cache_dir: None,
            batch_size: FETCH_BATCH_SIZE,
            max_attempts: FETCH_MAX_ATTEMPTS,
            base_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        })
    }

    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    pub fn with_batch_size(mut self, n: usize) -> Self {
        self.batch_size = n.max(1);
        self
    }

    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.base_backoff = base;
        self
    }

    fn cache_path(&self, text: &str) -> Option<PathBuf> {
        let dir = self.cache_dir.as_ref()?;
        let text_digest = Sha256::digest(text.as_bytes());
        let mut h = Sha256::new();
        h.update(self.endpoint.as_bytes());
        h.update([0u8]);
        h.update(self.model.as_bytes());
        h.update([0u8]);
        h.update(text_digest);
        Some(dir.join(format!("{}.json", hex::encode(h.finalize()))))
    }

    fn read_cache(&self, text: &str) -> Option<Vec<f64>> {
        let path = self.cache_path(text)?;
        let bytes = fs::read(path).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    fn write_cache(&self, text: &str, v: &[f64]) -> Result<()> {
        let Some(path) = self.cache_path(text) else {
            return Ok(());
        };
        let dir = path.parent().expect("cache file has a parent");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec(v).unwrap()).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    /// Embeds every pool item, in pool order. Cached vectors are reused without a request.
    pub fn fetch(&self, pool: &ItemPool) -> Result<(EmbeddingMatrix, FetchStats)> {
        let mut stats = FetchStats::default();
        let mut vectors: Vec<Option<Vec<f64>>> = pool
            .items()
            .iter()
            .map(|item| self.read_cache(&item.text))
            .collect();
        stats.cache_hits = vectors.iter().filter(|v| v.is_some()).count();
        let missing: Vec<usize> = (0..pool.len()).filter(|&i| vectors[i].is_none()).collect();

        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        for batch in missing.chunks(self.batch_size) {
            let texts: Vec<&str> = batch
                .iter()
                .map(|&i| pool.items()[i].text.as_str())
                .collect();
            let embeddings = self.request_batch(&agent, &texts, &mut stats)?;
            for (&i, v) in batch.iter().zip(embeddings) {
                self.write_cache(&pool.items()[i].text, &v)?;
                vectors[i] = Some(v);
            }
        }

        let vectors: Vec<Vec<f64>> = vectors.into_iter().map(|v| v.expect("filled")).collect();
        let width = vectors.first().map_or(0, |v| v.len());
        for (item, v) in pool.items().iter().zip(&vectors) {
            if v.len() != width {
                return Err(IngestError::InconsistentDimension {
                    id: item.id.clone(),
                    expected: width,
                    found: v.len(),
                });
            }
        }
        Ok((EmbeddingMatrix::from_rows(pool.ids(), &vectors)?, stats))
    }

    fn request_batch(
        &self,
        agent: &ureq::Agent,
        texts: &[&str],
        stats: &mut FetchStats,
    ) -> Result<Vec<Vec<f64>>> {
        let url = format!("{}/embeddings", self.endpoint);
        let body = serde_json::json!({ "model": self.model, "input": texts });
        let mut last_status = 0;
        for attempt in 0..self.max_attempts {
            if attempt > 0 {
                stats.retries += 1;
                let wait = self.base_backoff * 2u32.pow(attempt - 1);
                log::warn!(
                    "embeddings request retry {attempt}/{} after HTTP {last_status}, waiting {wait:?}",
                    self.max_attempts - 1
                );
                thread::sleep(wait);
            }
            stats.requests += 1;
            let response = agent
                .post(&url)
                .set("Authorization", &format!("Bearer {}", self.api_key))
                .set("Content-Type", "application/json")
                .send_json(&body);
            match response {
                Ok(resp) => {
                    let json: serde_json::Value = resp
                        .into_json()
                        .map_err(|e| IngestError::BadResponse(e.to_string()))?;
                    return parse_embeddings_response(&json, texts.len());
                }
                Err(ureq::Error::Status(code, resp)) if code == 429 || code >= 500 => {
                    last_status = code;
                    drop(resp);
                }
                Err(ureq::Error::Status(code, resp)) => {
                    let text = resp.into_string().unwrap_or_default();
                    let excerpt: String = text.chars().take(200).collect();
                    return Err(IngestError::Http {
                        status: code,
                        excerpt,
                    });
                }
                Err(e) => return Err(IngestError::Transport(e.to_string())),
            }
        }
        Err(IngestError::RetryExhausted {
            attempts: self.max_attempts,
            last_status,
        })
    }
}

fn parse_embeddings_response(json: &serde_json::Value, expected: usize) -> Result<Vec<Vec<f64>>> {
    let data = json
        .get("data")
        .and_then(|d| d.as_array())
        .ok_or_else(|| IngestError::BadResponse("missing `data` array".into()))?;
    if data.len() != expected {
        return Err(IngestError::BadResponse(format!(
            "expected {expected} embeddings, got {}",
            data.len()
        )));
    }
    let mut out: Vec<(usize, Vec<f64>)> = Vec::with_capacity(data.len());
    for (pos, entry) in data.iter().enumerate() {
        let index = entry
            .get("index")
            .and_then(|i| i.as_u64())
            .map_or(pos, |i| i as usize);
        let v: Vec<f64> = entry
            .get("embedding")
            .and_then(|e| e.as_array())
            .ok_or_else(|| IngestError::BadResponse(format!("entry {pos} has no embedding")))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| IngestError::BadResponse(format!("entry {pos}: non-numeric value")))
            })
            .collect::<Result<_>>()?;
        out.push((index, v));
    }
    out.sort_by_key(|(i, _)| *i);
    if out.iter().enumerate().any(|(pos, (i, _))| pos != *i) {
        return Err(IngestError::BadResponse("response indices do not cover the batch".into()));
    }
    Ok(out.into_iter().map(|(_, v)| v).collect())
}
