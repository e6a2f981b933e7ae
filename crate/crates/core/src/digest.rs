//! SHA-256 helpers. All digests are lowercase hex.

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// Digest over a sequence of parts, each length-prefixed so that part
/// boundaries cannot be shifted to produce a collision.
#[derive(Default)]
pub struct PartsHasher {
    inner: Sha256,
}

impl PartsHasher {
    pub fn new(domain: &str) -> Self {
        let mut h = Self { inner: Sha256::new() };
        h.part(domain);
        h
    }

    pub fn part(&mut self, bytes: impl AsRef<[u8]>) -> &mut Self {
        let bytes = bytes.as_ref();
        self.inner.update((bytes.len() as u64).to_le_bytes());
        self.inner.update(bytes);
        self
    }

    pub fn finish(self) -> String {
        hex::encode(self.inner.finalize())
    }
}

/// Digest of a value's canonical JSON serialization.
pub fn json_digest<T: serde::Serialize>(value: &T) -> String {
    sha256_hex(serde_json::to_vec(value).expect("value serializes to JSON"))
}
