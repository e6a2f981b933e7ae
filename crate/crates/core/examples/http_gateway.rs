//! Sends one chain prompt to an OpenAI-compatible chat endpoint through the
//! gateway, with retries, rate limiting and an on-disk response cache.
//!
//! LLM_ENDPOINT=http://localhost:8000/v1/chat/completions LLM_MODEL=my-model \
//!   cargo run --example http_gateway
//!
//! The API key, if any, is read from LLM_API_KEY.

use attrmanip::corpus::{toy, TaskRegistry};
use attrmanip::llm::{CompletionParams, Gateway, HttpBackend, ResponseCache};
use attrmanip::parse::extract_final_sentence;
use attrmanip::prompt::{render, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (Ok(endpoint), Ok(model)) = (std::env::var("LLM_ENDPOINT"), std::env::var("LLM_MODEL")) else {
        eprintln!("set LLM_ENDPOINT and LLM_MODEL to run this example");
        return Ok(());
    };
    let registry = TaskRegistry::bundled();
    let spec = registry.get("sst2")?;
    let seed = &toy::pool(spec)?[0];
    let target = spec.labels.iter().find(|l| **l != seed.label).unwrap();
    let prompt = render(Variant::Cotam, seed, spec, Some(target))?;

    let cache_dir = std::env::temp_dir().join("attrmanip-example-cache");
    let gateway = Gateway::new(Box::new(HttpBackend::from_env(endpoint)))
        .with_rate_limit(60)
        .with_cache(ResponseCache::open(&cache_dir)?);
    let params = CompletionParams::for_variant(model, Variant::Cotam);
    let response = gateway.complete(&prompt, &params)?;
    println!("{}\n---", response.text);
    println!("{:?}", extract_final_sentence(&response.text, seed.manipulated_text(spec), Variant::Cotam)?);
    println!("stats {:?}", gateway.stats());
    Ok(())
}
