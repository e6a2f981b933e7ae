//! Runs the label-switching chain over an SST-2 seed set against the bundled
//! scripted backend and assembles the augmented training set.
//!
//! cargo run --example mock_generation

use attrmanip::corpus::{sample_seed_set, toy, SamplingMode, TaskRegistry};
use attrmanip::llm::{CompletionParams, Gateway, MockScript};
use attrmanip::pipeline::{assemble_training_set, run_generation, RunOptions};
use attrmanip::prompt::Variant;

const SCRIPT: &str = include_str!("../fixtures/sst2.mock");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let registry = TaskRegistry::bundled();
    let spec = registry.get("sst2")?;
    let pool = toy::pool(spec)?;
    let seeds = sample_seed_set(&pool, spec, SamplingMode::NWayKShot, 4, 7)?;
    let gateway = Gateway::mock(MockScript::parse(SCRIPT)?);

    for variant in [Variant::Cotam, Variant::Cotda, Variant::Flipda] {
        let params = CompletionParams::for_variant("mock-model", variant);
        let run = run_generation(&seeds, variant, spec, &params, &gateway, &RunOptions::default())?;
        let training = assemble_training_set(&run, &seeds.members, spec, true);
        let b = training.budget;
        println!(
            "{variant}: seeds {} attempted {} realized {} members {} histogram {:?}",
            b.seeds,
            b.attempted,
            b.realized,
            training.len(),
            training.label_histogram(spec)
        );
        if let Some(r) = run.records.first() {
            let seed = seeds.members.iter().find(|s| s.id == r.seed_id).unwrap();
            println!("  {} -> {}: {:?}", seed.manipulated_text(spec), r.target_label, r.sentence);
        }
    }
    Ok(())
}
