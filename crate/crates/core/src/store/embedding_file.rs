//! Embedding file: a header line `EMB1\t<dim>\t<count>\t<provider_id>`, then
//! one `<sha256(text)>\t<base64 little-endian f32 row>` line per text.

use std::collections::HashMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use super::StoreError;
use crate::digest::sha256_hex;

const MAGIC: &str = "EMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    provider_id: String,
    rows: Vec<(String, Vec<f32>)>,
    index: HashMap<String, usize>,
}

pub fn text_digest(text: &str) -> String {
    sha256_hex(text)
}

impl EmbeddingTable {
    pub fn new(dim: usize, provider_id: impl Into<String>) -> Self {
        Self {
            dim,
            provider_id: provider_id.into(),
            rows: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, digest: &str) -> Option<&[f32]> {
        self.index.get(digest).map(|&i| self.rows[i].1.as_slice())
    }

    pub fn get_text(&self, text: &str) -> Option<&[f32]> {
        self.get(&text_digest(text))
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.rows.iter().map(|(d, r)| (d.as_str(), r.as_slice()))
    }

    /// Inserts a row keyed by digest; an existing key keeps its first row.
    pub fn insert(&mut self, digest: impl Into<String>, row: Vec<f32>) -> Result<bool, StoreError> {
        if row.len() != self.dim {
            return Err(StoreError::Format {
                path: "<memory>".into(),
                line: 0,
                reason: format!("row has dim {} but table has dim {}", row.len(), self.dim),
            });
        }
        let digest = digest.into();
        if self.index.contains_key(&digest) {
            return Ok(false);
        }
        self.index.insert(digest.clone(), self.rows.len());
        self.rows.push((digest, row));
        Ok(true)
    }

    pub fn insert_text(&mut self, text: &str, row: Vec<f32>) -> Result<bool, StoreError> {
        self.insert(text_digest(text), row)
    }

    pub fn to_string_repr(&self) -> String {
        let mut out = format!("{MAGIC}\t{}\t{}\t{}\n", self.dim, self.rows.len(), self.provider_id);
        for (digest, row) in &self.rows {
            let bytes: Vec<u8> = row.iter().flat_map(|v| v.to_le_bytes()).collect();
            out.push_str(digest);
            out.push('\t');
            out.push_str(&STANDARD.encode(bytes));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, source: &str) -> Result<Self, StoreError> {
        let bad = |line: usize, reason: String| StoreError::Format {
            path: source.into(),
            line,
            reason,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
        let parts: Vec<&str> = header.splitn(4, '\t').collect();
        if parts.len() != 4 || parts[0] != MAGIC {
            return Err(bad(1, format!("expected `{MAGIC}\\t<dim>\\t<count>\\t<provider>` header")));
        }
        let dim: usize = parts[1].parse().map_err(|_| bad(1, format!("bad dim `{}`", parts[1])))?;
        let count: usize = parts[2].parse().map_err(|_| bad(1, format!("bad count `{}`", parts[2])))?;
        if dim == 0 {
            return Err(bad(1, "dim must be positive".into()));
        }
        let mut table = Self::new(dim, parts[3]);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let (digest, b64) = line.split_once('\t').ok_or_else(|| bad(lineno, "expected `<digest>\\t<row>`".into()))?;
            let bytes = STANDARD.decode(b64).map_err(|e| bad(lineno, format!("bad base64: {e}")))?;
            if bytes.len() != dim * 4 {
                return Err(bad(lineno, format!("row has {} bytes, expected {}", bytes.len(), dim * 4)));
            }
            let row: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if row.iter().any(|v| !v.is_finite()) {
                return Err(bad(lineno, "non-finite entry".into()));
            }
            if !table.insert(digest, row)? {
                return Err(bad(lineno, format!("duplicate digest {digest}")));
            }
        }
        if table.len() != count {
            return Err(bad(1, format!("header count {count} but {} rows", table.len())));
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let path = path.as_ref();
        crate::llm::write_atomic(path, self.to_string_repr().as_bytes()).map_err(|e| StoreError::io(path, e))
    }
}
