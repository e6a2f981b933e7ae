//! Embeds texts with the deterministic stub provider, caches them in an
//! embedding file, and serves them back through the file provider.
//!
//! cargo run --example embed_texts

use attrmanip::embed::{CachedProvider, EmbeddingProvider, FileProvider, StubProvider};
use attrmanip::eval::classify::dot;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let texts = ["A charming film.", "A charming film.", "Shares rallied on earnings."];
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("vectors.emb");

    let cached = CachedProvider::open(StubProvider::new(32), &path)?;
    let vectors = cached.embed_batch(&texts)?;
    println!("provider {} cached {} rows", cached.id(), cached.len());
    println!("self cosine {:.6}", dot(&vectors[0].values, &vectors[1].values));
    println!("cross cosine {:.6}", dot(&vectors[0].values, &vectors[2].values));

    let file = FileProvider::open(&path)?;
    let again = file.embed_batch(&texts[..1])?;
    println!("file provider matches: {}", again[0].values == vectors[0].values);
    if let Err(e) = file.embed_batch(&["never embedded"]) {
        println!("missing text: {e}");
    }
    Ok(())
}
