//! Renders every generation variant for one AG-News seed.
//!
//! cargo run --example render_prompts

use attrmanip::corpus::{toy, TaskRegistry};
use attrmanip::prompt::{enumerate_targets, render, render_seed_proposal, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let registry = TaskRegistry::bundled();
    let spec = registry.get("agnews")?;
    let seed = &toy::pool(spec)?[0];
    let targets = enumerate_targets(spec, &seed.label)?;
    println!("seed {} ({}) targets {targets:?}\n", seed.id, seed.label);
    for variant in Variant::ALL.into_iter().filter(|v| *v != Variant::SeedProposal) {
        let target = variant.is_switching().then(|| targets[0].as_str());
        let prompt = render(variant, seed, spec, target)?;
        println!("== {variant}\n{}", prompt.text);
    }
    println!("== seed_proposal\n{}", render_seed_proposal(spec, "sports", 3)?.text);
    Ok(())
}
