//! Persists a generated run to a manifest-tracked directory, loads it back,
//! and shows that re-persisting identical content is a no-op.
//!
//! cargo run --example persist_run

use attrmanip::corpus::{sample_seed_set, toy, SamplingMode, TaskRegistry};
use attrmanip::llm::{CompletionParams, Gateway, MockScript};
use attrmanip::pipeline::{assemble_training_set, run_generation, RunOptions};
use attrmanip::prompt::Variant;
use attrmanip::store::{load_run, persist_run, RunArtifacts, RunContext};

const SCRIPT: &str = include_str!("../fixtures/agnews.mock");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let registry = TaskRegistry::bundled();
    let spec = registry.get("agnews")?;
    let pool = toy::pool(spec)?;
    let seeds = sample_seed_set(&pool, spec, SamplingMode::NWayKShot, 2, 1)?;
    let params = CompletionParams::for_variant("mock-model", Variant::Cotam);
    let gateway = Gateway::mock(MockScript::parse(SCRIPT)?);
    let run = run_generation(&seeds, Variant::Cotam, spec, &params, &gateway, &RunOptions::default())?;
    let training = assemble_training_set(&run, &seeds.members, spec, true);
    let test = toy::test_set(spec)?;

    let root = tempfile::tempdir()?;
    let artifacts = RunArtifacts {
        spec,
        seeds: &seeds,
        run: &run,
        training: &training,
        include_seeds: true,
        test: Some(&test),
    };
    let ctx = RunContext {
        created_at: 1_700_000_000,
        config_digest: "example".into(),
        backend_id: "mock".into(),
        retry: gateway.retry_policy().clone(),
        gateway: gateway.stats(),
    };
    let (manifest, outcome) = persist_run(root.path(), &artifacts, &ctx)?;
    println!("{outcome:?} {}", manifest.display());
    let (_, again) = persist_run(root.path(), &artifacts, &ctx)?;
    println!("second persist: {again:?}");

    let stored = load_run(&manifest)?;
    println!("counts {:?}", stored.manifest.counts);
    for (key, entry) in &stored.manifest.files {
        println!("  {key}: {} ({} bytes, sha256 {})", entry.path, entry.bytes, &entry.sha256[..12]);
    }
    Ok(())
}
