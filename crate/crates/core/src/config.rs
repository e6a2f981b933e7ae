//! Flat `key = value` run configuration. Lines starting with `#` and blank
//! lines are ignored; values run to the end of the line, trimmed. Command
//! line flags override file values.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::digest::json_digest;

pub const KNOWN_KEYS: &[&str] = &[
    "tasks",
    "task",
    "data",
    "pool_size",
    "balanced",
    "test",
    "variant",
    "model",
    "temperature",
    "max_tokens",
    "k",
    "mode",
    "seed",
    "one_way_label",
    "workers",
    "backend",
    "script",
    "endpoint",
    "cache",
    "rpm",
    "out",
    "include_seeds",
    "provider",
    "embeddings",
    "algo",
    "knn_k",
    "runs",
    "shots",
    "train",
    "manifest",
];

const LOCATION_KEYS: &[&str] = &["out", "cache", "workers", "rpm", "embeddings"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{source_name}:{line}: {reason}")]
    Syntax { source_name: String, line: usize, reason: String },
    #[error("{source_name}:{line}: unknown key `{key}`")]
    UnknownKey { source_name: String, line: usize, key: String },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str, source_name: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                source_name: source_name.to_string(),
                line: i + 1,
                reason: "expected `key = value`".into(),
            })?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    source_name: source_name.to_string(),
                    line: i + 1,
                    key: key.to_string(),
                });
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.display().to_string(), e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Records a flag value, replacing any file value.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        debug_assert!(KNOWN_KEYS.contains(&key), "unknown config key {key}");
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn set_opt<T: ToString>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| ConfigError::Value {
                    key: key.to_string(),
                    value: v.to_string(),
                    reason: e.to_string(),
                })
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Digest of the effective configuration, leaving out keys that only
    /// choose where files go or how fast work runs.
    pub fn digest(&self) -> String {
        let kept: BTreeMap<&String, &String> = self.values.iter().filter(|(k, _)| !LOCATION_KEYS.contains(&k.as_str())).collect();
        json_digest(&kept)
    }

    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let mut c = RunConfig::parse("# run\ntask = sst2\n\nk=10\nvariant = cotam \n", "c").unwrap();
        assert_eq!(c.get::<usize>("k").unwrap(), Some(10));
        c.set_opt("k", Some(4));
        c.set_opt::<usize>("workers", None);
        assert_eq!(c.get::<usize>("k").unwrap(), Some(4));
        assert_eq!(c.raw("variant"), Some("cotam"));
        assert_eq!(c.get_or("workers", 4usize).unwrap(), 4);
        let back = RunConfig::parse(&c.to_text(), "again").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest(), c.digest());
    }

    #[test]
    fn errors_carry_lines() {
        assert!(matches!(RunConfig::parse("task sst2", "c"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(RunConfig::parse("\ncolour = red", "c"), Err(ConfigError::UnknownKey { line: 2, .. })));
        let c = RunConfig::parse("k = ten", "c").unwrap();
        assert!(matches!(c.get::<usize>("k"), Err(ConfigError::Value { .. })));
    }
}
