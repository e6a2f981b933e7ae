//! Manifest-tracked run directories.
//!
//! A run lives in `<root>/<run_id>/`: `seedset.json`, `records.jsonl`,
//! `training.jsonl`, an optional `test.jsonl`, and `manifest.json`, which is
//! written last and lists every file with its SHA-256.

mod embedding_file;

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{parse_dataset, CorpusError, SamplingMode, SeedExample, SeedSet, TaskSpec};
use crate::digest::sha256_hex;
use crate::llm::{write_atomic, CompletionParams, GatewayStats, RetryPolicy};
use crate::pipeline::{Budget, GenerationRecord, GenerationRun, TrainingMember, TrainingSet};
use crate::prompt::Variant;

pub use embedding_file::{text_digest, EmbeddingTable};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: missing file referenced by manifest")]
    Missing { path: String },
    #[error("{path}: digest mismatch (manifest {expected}, file {actual})")]
    Corruption { path: String, expected: String, actual: String },
    #[error("{path}:{line}: {reason}")]
    Format { path: String, line: usize, reason: String },
    #[error("run {run_id} already exists with different content")]
    Conflict { run_id: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl StoreError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub seeds: usize,
    pub attempted: usize,
    pub realized: usize,
    pub dropped: usize,
    pub backend_errors: usize,
    pub training_members: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingInfo {
    pub mode: SamplingMode,
    pub k: usize,
    pub rng_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub one_way_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub run_id: String,
    pub task_id: String,
    pub task: TaskSpec,
    pub variant: Variant,
    pub params: CompletionParams,
    pub template_version: String,
    pub tool_version: String,
    pub created_at: u64,
    pub config_digest: String,
    pub sampling: SamplingInfo,
    pub include_seeds: bool,
    pub counts: RunCounts,
    /// Some records failed at the backend; a rerun with the cache resumes.
    pub partial: bool,
    pub backend_id: String,
    pub retry: RetryPolicy,
    pub retry_schedule_ms: Vec<u64>,
    pub gateway: GatewayStats,
    pub files: BTreeMap<String, FileEntry>,
}

/// Everything a run directory holds.
#[derive(Debug, Clone)]
pub struct RunArtifacts<'a> {
    pub spec: &'a TaskSpec,
    pub seeds: &'a SeedSet,
    pub run: &'a GenerationRun,
    pub training: &'a TrainingSet,
    pub include_seeds: bool,
    pub test: Option<&'a [SeedExample]>,
}

/// Run metadata supplied by the caller rather than derived from artifacts.
#[derive(Debug, Clone)]
pub struct RunContext {
    /// Unix seconds.
    pub created_at: u64,
    pub config_digest: String,
    pub backend_id: String,
    pub retry: RetryPolicy,
    pub gateway: GatewayStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PersistOutcome {
    Written,
    Unchanged,
    /// An earlier partial run was superseded.
    Replaced,
}

#[derive(Debug, Clone)]
pub struct StoredRun {
    pub manifest_path: PathBuf,
    pub manifest: RunManifest,
    pub seeds: SeedSet,
    pub run: GenerationRun,
    pub training: TrainingSet,
    pub test: Option<Vec<SeedExample>>,
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("artifact serializes"));
        out.push('\n');
    }
    out
}

fn encode_files(a: &RunArtifacts<'_>) -> BTreeMap<&'static str, (&'static str, String)> {
    let mut files = BTreeMap::new();
    let mut seeds = serde_json::to_string_pretty(a.seeds).expect("seed set serializes");
    seeds.push('\n');
    files.insert("seeds", ("seedset.json", seeds));
    files.insert("records", ("records.jsonl", jsonl(&a.run.records)));
    files.insert("training", ("training.jsonl", jsonl(&a.training.members)));
    if let Some(test) = a.test {
        files.insert("test", ("test.jsonl", jsonl(test.iter().map(|e| e.to_record(a.spec)))));
    }
    files
}

fn counts(a: &RunArtifacts<'_>) -> RunCounts {
    let b = a.training.budget;
    RunCounts {
        seeds: a.seeds.len(),
        attempted: b.attempted,
        realized: b.realized,
        dropped: b.dropped(),
        backend_errors: a
            .run
            .records
            .iter()
            .filter(|r| r.verdict == crate::parse::Verdict::BackendError)
            .count(),
        training_members: a.training.len(),
    }
}

/// Resolves a manifest path entry. Relative entries are taken from the
/// manifest's directory; absolute entries that do not exist here (a manifest
/// copied from another machine) fall back to the file name in that directory.
pub fn resolve_entry(manifest_dir: &Path, entry: &str) -> PathBuf {
    let p = Path::new(entry);
    if p.is_relative() {
        return manifest_dir.join(p);
    }
    if p.exists() {
        return p.to_path_buf();
    }
    let name = entry.rsplit(['/', '\\']).next().unwrap_or(entry);
    manifest_dir.join(name)
}

pub fn run_dir(root: &Path, run_id: &str) -> PathBuf {
    root.join(run_id)
}

/// Writes the run's files, then its manifest. Re-persisting identical
/// content leaves the directory untouched; a differing complete run is a
/// conflict, a differing partial run is replaced.
pub fn persist_run(root: &Path, a: &RunArtifacts<'_>, ctx: &RunContext) -> Result<(PathBuf, PersistOutcome), StoreError> {
    let dir = run_dir(root, &a.run.run_id);
    let manifest_path = dir.join(MANIFEST_FILE);
    let files = encode_files(a);

    let mut outcome = PersistOutcome::Written;
    if manifest_path.exists() {
        let existing = load_run(&manifest_path)?;
        let same = files.len() == existing.manifest.files.len()
            && files.iter().all(|(key, (_, body))| {
                existing.manifest.files.get(*key).map(|e| e.sha256.as_str()) == Some(sha256_hex(body).as_str())
            });
        if same {
            return Ok((manifest_path, PersistOutcome::Unchanged));
        }
        if !existing.manifest.partial {
            return Err(StoreError::Conflict {
                run_id: a.run.run_id.clone(),
            });
        }
        outcome = PersistOutcome::Replaced;
    }

    std::fs::create_dir_all(&dir).map_err(|e| StoreError::io(&dir, e))?;
    let mut entries = BTreeMap::new();
    for (key, (name, body)) in &files {
        let path = dir.join(name);
        write_atomic(&path, body.as_bytes()).map_err(|e| StoreError::io(&path, e))?;
        entries.insert(
            key.to_string(),
            FileEntry {
                path: name.to_string(),
                sha256: sha256_hex(body),
                bytes: body.len() as u64,
            },
        );
    }
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        run_id: a.run.run_id.clone(),
        task_id: a.spec.task_id.clone(),
        task: a.spec.clone(),
        variant: a.run.variant,
        params: a.run.params.clone(),
        template_version: a.run.template_version.clone(),
        tool_version: TOOL_VERSION.to_string(),
        created_at: ctx.created_at,
        config_digest: ctx.config_digest.clone(),
        sampling: SamplingInfo {
            mode: a.seeds.mode,
            k: a.seeds.k,
            rng_seed: a.seeds.rng_seed,
            one_way_label: a.seeds.one_way_label.clone(),
        },
        include_seeds: a.include_seeds,
        counts: counts(a),
        partial: a.run.has_backend_failures(),
        backend_id: ctx.backend_id.clone(),
        retry_schedule_ms: ctx.retry.schedule_ms(),
        retry: ctx.retry.clone(),
        gateway: ctx.gateway.clone(),
        files: entries,
    };
    let mut body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    body.push('\n');
    write_atomic(&manifest_path, body.as_bytes()).map_err(|e| StoreError::io(&manifest_path, e))?;
    Ok((manifest_path, outcome))
}

pub fn load_manifest(path: &Path) -> Result<RunManifest, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => StoreError::Missing {
            path: path.display().to_string(),
        },
        _ => StoreError::io(path, e),
    })?;
    serde_json::from_str(&text).map_err(|e| StoreError::Format {
        path: path.display().to_string(),
        line: e.line(),
        reason: e.to_string(),
    })
}

/// Reads a manifest-listed file and checks its digest.
pub fn read_verified(manifest_path: &Path, entry: &FileEntry) -> Result<String, StoreError> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let path = resolve_entry(dir, &entry.path);
    let bytes = std::fs::read(&path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => StoreError::Missing {
            path: path.display().to_string(),
        },
        _ => StoreError::io(&path, e),
    })?;
    let actual = sha256_hex(&bytes);
    if actual != entry.sha256 {
        return Err(StoreError::Corruption {
            path: path.display().to_string(),
            expected: entry.sha256.clone(),
            actual,
        });
    }
    String::from_utf8(bytes).map_err(|e| StoreError::Format {
        path: path.display().to_string(),
        line: 0,
        reason: e.to_string(),
    })
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str, source: &str) -> Result<Vec<T>, StoreError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| StoreError::Format {
                path: source.to_string(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

fn entry<'m>(m: &'m RunManifest, key: &str, manifest_path: &Path) -> Result<&'m FileEntry, StoreError> {
    m.files.get(key).ok_or_else(|| StoreError::Format {
        path: manifest_path.display().to_string(),
        line: 0,
        reason: format!("manifest lists no `{key}` file"),
    })
}

/// Loads a run and verifies every listed file against its digest.
pub fn load_run(manifest_path: &Path) -> Result<StoredRun, StoreError> {
    let manifest = load_manifest(manifest_path)?;
    let seeds_text = read_verified(manifest_path, entry(&manifest, "seeds", manifest_path)?)?;
    let records_text = read_verified(manifest_path, entry(&manifest, "records", manifest_path)?)?;
    let training_text = read_verified(manifest_path, entry(&manifest, "training", manifest_path)?)?;
    let test = match manifest.files.get("test") {
        Some(e) => {
            let text = read_verified(manifest_path, e)?;
            Some(parse_dataset(text.as_bytes(), &manifest.task, &e.path)?)
        }
        None => None,
    };

    let seeds: SeedSet = serde_json::from_str(&seeds_text).map_err(|e| StoreError::Format {
        path: "seedset.json".into(),
        line: e.line(),
        reason: e.to_string(),
    })?;
    let records: Vec<GenerationRecord> = parse_jsonl(&records_text, "records.jsonl")?;
    let members: Vec<TrainingMember> = parse_jsonl(&training_text, "training.jsonl")?;
    let c = manifest.counts;
    let run = GenerationRun {
        run_id: manifest.run_id.clone(),
        task_id: manifest.task_id.clone(),
        variant: manifest.variant,
        params: manifest.params.clone(),
        template_version: manifest.template_version.clone(),
        records,
    };
    let training = TrainingSet {
        task_id: manifest.task_id.clone(),
        members,
        budget: Budget {
            seeds: c.seeds,
            attempted: c.attempted,
            realized: c.realized,
        },
    };
    Ok(StoredRun {
        manifest_path: manifest_path.to_path_buf(),
        manifest,
        seeds,
        run,
        training,
        test,
    })
}
