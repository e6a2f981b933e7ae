//! Projects seed/generation pairs onto two principal components and writes
//! the pair plot as CSV and SVG.
//!
//! cargo run --example pca_plot -- [out_dir]

use attrmanip::corpus::{sample_seed_set, toy, SamplingMode, TaskRegistry};
use attrmanip::embed::{EmbeddingProvider, StubProvider};
use attrmanip::eval::{embedding_text, pair_plot, AnnotatedPoint};
use attrmanip::llm::{CompletionParams, Gateway, MockScript};
use attrmanip::pipeline::{assemble_training_set, run_generation, RunOptions};
use attrmanip::prompt::Variant;

const SCRIPT: &str = include_str!("../fixtures/sst2.mock");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let registry = TaskRegistry::bundled();
    let spec = registry.get("sst2")?;
    let pool = toy::pool(spec)?;
    let seeds = sample_seed_set(&pool, spec, SamplingMode::NWayKShot, 5, 2)?;
    let params = CompletionParams::for_variant("mock-model", Variant::Cotam);
    let run = run_generation(&seeds, Variant::Cotam, spec, &params, &Gateway::mock(MockScript::parse(SCRIPT)?), &RunOptions::default())?;
    let training = assemble_training_set(&run, &seeds.members, spec, true);

    let texts: Vec<String> = training.members.iter().map(|m| embedding_text(spec, &m.example)).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let vectors = StubProvider::new(64).embed_batch(&refs)?;
    let points: Vec<AnnotatedPoint> = training
        .members
        .iter()
        .zip(vectors)
        .map(|(m, v)| AnnotatedPoint {
            vector: v.values,
            label: m.example.label.clone(),
            pair_id: m.seed_id.clone(),
            role: m.provenance.into(),
        })
        .collect();
    let plot = pair_plot(&points)?;
    println!(
        "{} points, {} arrows, explained ratio {:.3?}",
        plot.rows.len(),
        plot.arrows.len(),
        plot.projection.explained_ratio
    );
    let csv = out_dir.join("pairs.csv");
    let svg = out_dir.join("pairs.svg");
    std::fs::write(&csv, plot.to_csv())?;
    std::fs::write(&svg, plot.to_svg(&spec.labels))?;
    println!("wrote {} and {}", csv.display(), svg.display());
    Ok(())
}
