//! Runs the repeated few-shot evaluation protocol on the bundled AG-News
//! data: seeds only versus seeds plus label-switched generations.
//!
//! The stub embedding provider hashes text, so accuracies here sit near
//! chance; swap in a real sentence encoder for meaningful numbers.
//!
//! cargo run --example multi_run_eval

use attrmanip::corpus::{sample_seed_set, toy, SamplingMode, TaskRegistry};
use attrmanip::embed::StubProvider;
use attrmanip::eval::{comparison_table, multi_run, Algorithm, Protocol, TrainSource};
use attrmanip::llm::{CompletionParams, Gateway, MockScript};
use attrmanip::pipeline::{run_generation, RunOptions};
use attrmanip::prompt::Variant;

const SCRIPT: &str = include_str!("../fixtures/agnews.mock");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let registry = TaskRegistry::bundled();
    let spec = registry.get("agnews")?;
    let pool = toy::pool(spec)?;
    let test = toy::test_set(spec)?;
    let k = spec.labels.iter().map(|l| pool.iter().filter(|e| &e.label == l).count()).min().unwrap();
    let everything = sample_seed_set(&pool, spec, SamplingMode::NWayKShot, k, 0)?;
    let params = CompletionParams::for_variant("mock-model", Variant::Cotam);
    let gateway = Gateway::mock(MockScript::parse(SCRIPT)?);
    let generations = run_generation(&everything, Variant::Cotam, spec, &params, &gateway, &RunOptions::default())?;

    let provider = StubProvider::new(64);
    let mut reports = Vec::new();
    for train_source in [TrainSource::Seeds, TrainSource::Augmented] {
        let protocol = Protocol {
            runs: 5,
            shots: 2,
            algorithm: Algorithm::Nc,
            train_source,
            ..Protocol::default()
        };
        let report = multi_run(spec, &pool, Some(&generations), &test, &provider, &protocol)?;
        println!("{}: accuracies {:?}", report.method, report.accuracies);
        reports.push(report);
    }
    println!("\n{}", comparison_table(&reports));
    Ok(())
}
