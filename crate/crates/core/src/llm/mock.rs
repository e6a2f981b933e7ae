//! Scripted backend for offline runs.
//!
//! A script is JSONL. Each line maps either a request digest or a call
//! ordinal (0-based, counted across all requests reaching the backend) to a
//! response:
//!
//! ```text
//! {"digest": "9f2c…", "response": "1. …\n2. …\n3. \"A dull film.\""}
//! {"digest": "9f2c…", "response": "served on the second call"}
//! {"ordinal": 7, "response": "served for the eighth call"}
//! ```
//!
//! Repeated digest lines form a sequence consumed one per call; the last
//! element keeps being served once the sequence runs out. Digest matches take
//! precedence over ordinals. Blank lines and lines starting with `#` are
//! skipped; any extra keys (e.g. `"note"`) are ignored. A request matching
//! nothing is an error.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{cache_key, Backend, BackendError, BackendRequest, CompletionParams};

#[derive(Debug, Serialize, Deserialize)]
struct ScriptLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ordinal: Option<u64>,
    response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

#[derive(Debug, Default, Clone)]
pub struct MockScript {
    lines: Vec<Entry>,
}

#[derive(Debug, Clone)]
struct Entry {
    key: ScriptKey,
    response: String,
    note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum ScriptKey {
    Digest(String),
    Ordinal(u64),
}

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, BackendError> {
        let mut script = Self::new();
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let parsed: ScriptLine = serde_json::from_str(trimmed)
                .map_err(|e| BackendError::Config(format!("mock script line {}: {e}", i + 1)))?;
            let key = match (parsed.digest, parsed.ordinal) {
                (Some(d), None) => ScriptKey::Digest(d),
                (None, Some(o)) => ScriptKey::Ordinal(o),
                _ => {
                    return Err(BackendError::Config(format!(
                        "mock script line {}: exactly one of \"digest\" or \"ordinal\" is required",
                        i + 1
                    )))
                }
            };
            script.lines.push(Entry {
                key,
                response: parsed.response,
                note: parsed.note,
            });
        }
        Ok(script)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("cannot read mock script {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn push_digest(&mut self, digest: impl Into<String>, response: impl Into<String>) -> &mut Self {
        self.lines.push(Entry {
            key: ScriptKey::Digest(digest.into()),
            response: response.into(),
            note: None,
        });
        self
    }

    /// Scripts a response for the request that `prompt` and `params` produce.
    pub fn push_for(
        &mut self,
        prompt: &str,
        params: &CompletionParams,
        draw: u32,
        response: impl Into<String>,
        note: Option<String>,
    ) -> &mut Self {
        self.lines.push(Entry {
            key: ScriptKey::Digest(cache_key(prompt, params, draw)),
            response: response.into(),
            note,
        });
        self
    }

    pub fn push_ordinal(&mut self, ordinal: u64, response: impl Into<String>) -> &mut Self {
        self.lines.push(Entry {
            key: ScriptKey::Ordinal(ordinal),
            response: response.into(),
            note: None,
        });
        self
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            let (digest, ordinal) = match &l.key {
                ScriptKey::Digest(d) => (Some(d.clone()), None),
                ScriptKey::Ordinal(o) => (None, Some(*o)),
            };
            let line = ScriptLine {
                digest,
                ordinal,
                response: l.response.clone(),
                note: l.note.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("script line serializes"));
            out.push('\n');
        }
        out
    }
}

pub struct MockBackend {
    by_digest: HashMap<String, Vec<String>>,
    by_ordinal: BTreeMap<u64, String>,
    served: Mutex<HashMap<String, usize>>,
    calls: AtomicU64,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        let mut by_digest: HashMap<String, Vec<String>> = HashMap::new();
        let mut by_ordinal = BTreeMap::new();
        for l in script.lines {
            match l.key {
                ScriptKey::Digest(d) => by_digest.entry(d).or_default().push(l.response),
                ScriptKey::Ordinal(o) => {
                    by_ordinal.insert(o, l.response);
                }
            }
        }
        Self {
            by_digest,
            by_ordinal,
            served: Mutex::new(HashMap::new()),
            calls: AtomicU64::new(0),
        }
    }

    /// Requests that reached the backend so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn send(&self, req: &BackendRequest<'_>) -> Result<String, BackendError> {
        let ordinal = self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(seq) = self.by_digest.get(req.digest) {
            let mut served = self.served.lock().expect("mock counter lock");
            let n = served.entry(req.digest.to_string()).or_insert(0);
            let text = seq[(*n).min(seq.len() - 1)].clone();
            *n += 1;
            return Ok(text);
        }
        if let Some(text) = self.by_ordinal.get(&ordinal) {
            return Ok(text.clone());
        }
        Err(BackendError::Unscripted {
            digest: req.digest.to_string(),
        })
    }
}
