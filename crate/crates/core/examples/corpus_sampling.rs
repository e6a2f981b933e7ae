//! Loads the bundled SST-2 toy pool, validates it, and draws seed sets in
//! each sampling mode.
//!
//! cargo run --example corpus_sampling

use attrmanip::corpus::{parse_dataset, sample_seed_set_with, toy, SampleRequest, SamplingMode, TaskRegistry};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let registry = TaskRegistry::bundled();
    let spec = registry.get("sst2")?;
    let jsonl = toy::pool_jsonl("sst2").expect("bundled pool");
    let pool = parse_dataset(jsonl.as_bytes(), spec, "sst2.jsonl")?;
    println!("{} examples, labels {:?}", pool.len(), spec.labels);

    for mode in SamplingMode::ALL {
        let req = SampleRequest {
            mode,
            k: 3,
            rng_seed: 42,
            one_way_label: None,
        };
        match sample_seed_set_with(&pool, spec, &req) {
            Ok(set) => println!("{mode}: {:?}", set.ids()),
            Err(e) => println!("{mode}: {e}"),
        }
    }

    let broken = "{\"id\": \"x1\", \"text\": \"fine\", \"label\": \"positive\"}\n{\"id\": \"x2\", \"text\": \"bad\", \"label\": \"sideways\"}\n";
    if let Err(e) = parse_dataset(broken.as_bytes(), spec, "broken.jsonl") {
        println!("rejected: {e}");
    }
    Ok(())
}
