use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Content-addressed response store: one text file per (digest, attempt) and
/// an append-only `index.jsonl`. Files are written to a temp name and renamed
/// into place, so concurrent writers never expose partial files.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct CacheIndexEntry {
    pub digest: String,
    pub attempt: u32,
    pub file: String,
    pub bytes: usize,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn file_name(digest: &str, attempt: u32) -> String {
        if attempt <= 1 {
            format!("{digest}.txt")
        } else {
            format!("{digest}.a{attempt}.txt")
        }
    }

    pub fn get(&self, digest: &str, attempt: u32) -> io::Result<Option<String>> {
        match fs::read_to_string(self.dir.join(Self::file_name(digest, attempt))) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn put(&self, digest: &str, attempt: u32, text: &str) -> io::Result<()> {
        let name = Self::file_name(digest, attempt);
        let target = self.dir.join(&name);
        if target.exists() {
            return Ok(());
        }
        write_atomic(&target, text.as_bytes())?;
        let entry = CacheIndexEntry {
            digest: digest.to_string(),
            attempt,
            file: name,
            bytes: text.len(),
        };
        let mut line = serde_json::to_string(&entry).expect("index entry serializes");
        line.push('\n');
        let mut index = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join("index.jsonl"))?;
        index.write_all(line.as_bytes())
    }

    pub fn index(&self) -> io::Result<Vec<CacheIndexEntry>> {
        let text = match fs::read_to_string(self.dir.join("index.jsonl")) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        Ok(text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect())
    }
}

/// Writes `bytes` to a sibling temp file, then renames over `target`.
pub(crate) fn write_atomic(target: &Path, bytes: &[u8]) -> io::Result<()> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static SEQ: AtomicU64 = AtomicU64::new(0);
    let dir = target.parent().unwrap_or(Path::new("."));
    let tmp = dir.join(format!(
        ".{}.{}.{}.tmp",
        target.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id(),
        SEQ.fetch_add(1, Ordering::Relaxed)
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, target)
}
