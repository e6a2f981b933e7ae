//! Text embedding providers: a deterministic offline stub, a precomputed
//! embedding file, and the HTTP embedding service, plus a caching wrapper
//! that records every vector in an embedding file.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::store::{text_digest, EmbeddingTable, StoreError};

pub const STUB_DIM: usize = 64;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("vector has non-finite entries")]
    NonFinite,
    #[error("{} text(s) have no embedding: {}", .digests.len(), .digests.join(", "))]
    Missing { digests: Vec<String> },
    #[error("embedding service transport error: {0}")]
    Transport(String),
    #[error("embedding service protocol error: {0}")]
    Protocol(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("unknown provider `{0}` (expected stub, stub:<dim>, file:<path> or service:<url>)")]
    UnknownProvider(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub provider_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, provider_id: impl Into<String>) -> Self {
        Self {
            values,
            provider_id: provider_id.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Unit-L2 copy of `v`.
pub fn normalize_values(v: &[f64]) -> Result<Vec<f64>, EmbedError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(EmbedError::NonFinite);
    }
    let n = l2_norm(v);
    if n == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

pub fn normalize(v: &EmbeddingVector) -> Result<EmbeddingVector, EmbedError> {
    Ok(EmbeddingVector::new(normalize_values(&v.values)?, v.provider_id.clone()))
}

pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> String;
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

impl EmbeddingProvider for Box<dyn EmbeddingProvider> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).embed_batch(texts)
    }
}

/// Offline stand-in: a Gaussian direction seeded by the text's SHA-256,
/// normalized and rounded to f32 so it survives an embedding file unchanged.
#[derive(Debug, Clone)]
pub struct StubProvider {
    dim: usize,
}

impl StubProvider {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "stub dim must be positive");
        Self { dim }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let digest = Sha256::digest(text.as_bytes());
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let unit = normalize_values(&raw).expect("gaussian draw is nonzero");
        unit.into_iter().map(|x| x as f32 as f64).collect()
    }
}

impl Default for StubProvider {
    fn default() -> Self {
        Self::new(STUB_DIM)
    }
}

impl EmbeddingProvider for StubProvider {
    fn id(&self) -> String {
        format!("stub-{}", self.dim)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let id = self.id();
        Ok(texts.iter().map(|t| EmbeddingVector::new(self.vector(t), id.clone())).collect())
    }
}

/// Serves vectors from an embedding file; absent texts are an error.
#[derive(Debug, Clone)]
pub struct FileProvider {
    table: EmbeddingTable,
}

impl FileProvider {
    pub fn new(table: EmbeddingTable) -> Self {
        Self { table }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        Ok(Self::new(EmbeddingTable::load(path)?))
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }
}

impl EmbeddingProvider for FileProvider {
    fn id(&self) -> String {
        self.table.provider_id().to_string()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut missing = Vec::new();
        let mut out = Vec::with_capacity(texts.len());
        for t in texts {
            let d = text_digest(t);
            match self.table.get(&d) {
                Some(row) => out.push(EmbeddingVector::new(row.iter().map(|&x| x as f64).collect(), self.id())),
                None => {
                    if !missing.contains(&d) {
                        missing.push(d);
                    }
                }
            }
        }
        if missing.is_empty() {
            Ok(out)
        } else {
            Err(EmbedError::Missing { digests: missing })
        }
    }
}

#[derive(Deserialize)]
struct ServiceResponse {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

/// Client for the embedding service: POST `{"texts": [...]}` and receive
/// `{"dim": d, "vectors": [[...], ...]}` with one row per text, in order.
pub struct ServiceProvider {
    endpoint: String,
    batch_size: usize,
    agent: ureq::Agent,
}

impl ServiceProvider {
    pub fn new(endpoint: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            batch_size: 64,
            agent,
        }
    }

    pub fn with_batch_size(mut self, n: usize) -> Self {
        self.batch_size = n.max(1);
        self
    }

    fn call(&self, texts: &[&str]) -> Result<ServiceResponse, EmbedError> {
        let body = json!({ "texts": texts }).to_string();
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json")
            .send(body.as_str())
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(EmbedError::Transport(format!("HTTP {status}: {}", text.trim())));
        }
        let parsed: ServiceResponse = serde_json::from_str(&text).map_err(|e| EmbedError::Protocol(e.to_string()))?;
        if parsed.vectors.len() != texts.len() {
            return Err(EmbedError::Protocol(format!(
                "sent {} texts, received {} vectors",
                texts.len(),
                parsed.vectors.len()
            )));
        }
        if parsed.dim == 0 {
            return Err(EmbedError::Protocol("dim must be positive".into()));
        }
        if let Some(row) = parsed.vectors.iter().find(|r| r.len() != parsed.dim) {
            return Err(EmbedError::DimMismatch {
                expected: parsed.dim,
                found: row.len(),
            });
        }
        if parsed.vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(parsed)
    }
}

impl EmbeddingProvider for ServiceProvider {
    fn id(&self) -> String {
        format!("service:{}", self.endpoint)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let id = self.id();
        let mut out = Vec::with_capacity(texts.len());
        let mut dim = None;
        for chunk in texts.chunks(self.batch_size) {
            let resp = self.call(chunk)?;
            if let Some(d) = dim.filter(|&d| d != resp.dim) {
                return Err(EmbedError::DimMismatch {
                    expected: d,
                    found: resp.dim,
                });
            }
            dim = Some(resp.dim);
            out.extend(resp.vectors.into_iter().map(|v| EmbeddingVector::new(v, id.clone())));
        }
        Ok(out)
    }
}

/// Wraps a provider with an embedding file: hits are served from the file,
/// misses are fetched once, stored as f32 and saved atomically. Returned
/// vectors always come from the file's f32 rows, so first and later calls
/// agree bit for bit.
pub struct CachedProvider<P> {
    inner: P,
    path: PathBuf,
    table: Mutex<Option<EmbeddingTable>>,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub fn open(inner: P, path: impl Into<PathBuf>) -> Result<Self, EmbedError> {
        let path = path.into();
        let table = if path.exists() {
            let t = EmbeddingTable::load(&path)?;
            if t.provider_id() != inner.id() {
                return Err(EmbedError::Protocol(format!(
                    "{} holds `{}` vectors, provider is `{}`",
                    path.display(),
                    t.provider_id(),
                    inner.id()
                )));
            }
            Some(t)
        } else {
            None
        };
        Ok(Self {
            inner,
            path,
            table: Mutex::new(table),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.table.lock().expect("table lock").as_ref().map_or(0, |t| t.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut guard = self.table.lock().expect("table lock");
        let mut misses: Vec<&str> = Vec::new();
        for t in texts {
            let known = guard.as_ref().is_some_and(|tab| tab.get_text(t).is_some());
            if !known && !misses.contains(t) {
                misses.push(t);
            }
        }
        if !misses.is_empty() {
            let fresh = self.inner.embed_batch(&misses)?;
            let table = guard.get_or_insert_with(|| EmbeddingTable::new(fresh[0].dim(), self.inner.id()));
            for (t, v) in misses.iter().zip(fresh) {
                if v.dim() != table.dim() {
                    return Err(EmbedError::DimMismatch {
                        expected: table.dim(),
                        found: v.dim(),
                    });
                }
                table.insert_text(t, v.values.iter().map(|&x| x as f32).collect())?;
            }
            table.save(&self.path)?;
        }
        let table = guard.as_ref();
        let id = self.id();
        Ok(texts
            .iter()
            .map(|t| {
                let row = table.and_then(|tab| tab.get_text(t)).expect("every text cached above");
                EmbeddingVector::new(row.iter().map(|&x| x as f64).collect(), id.clone())
            })
            .collect())
    }
}

/// Builds a provider from `stub`, `stub:<dim>`, `file:<path>` or
/// `service:<url>`.
pub fn provider_from_spec(spec: &str) -> Result<Box<dyn EmbeddingProvider>, EmbedError> {
    match spec.split_once(':') {
        None if spec == "stub" => Ok(Box::new(StubProvider::default())),
        Some(("stub", dim)) => {
            let dim: usize = dim.parse().map_err(|_| EmbedError::UnknownProvider(spec.into()))?;
            if dim == 0 {
                return Err(EmbedError::UnknownProvider(spec.into()));
            }
            Ok(Box::new(StubProvider::new(dim)))
        }
        Some(("file", path)) => Ok(Box::new(FileProvider::open(path)?)),
        Some(("service", url)) => Ok(Box::new(ServiceProvider::new(url))),
        _ => Err(EmbedError::UnknownProvider(spec.into())),
    }
}
