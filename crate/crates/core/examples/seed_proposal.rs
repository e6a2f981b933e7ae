//! Asks the (scripted) model to propose new seed sentences for a label.
//!
//! cargo run --example seed_proposal

use attrmanip::corpus::TaskRegistry;
use attrmanip::llm::{CompletionParams, Gateway, MockScript};
use attrmanip::pipeline::propose_seeds;
use attrmanip::prompt::render_seed_proposal;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let registry = TaskRegistry::bundled();
    let spec = registry.get("sst2")?;
    let params = CompletionParams::new("mock-model", 1.0);
    let prompt = render_seed_proposal(spec, "negative", 3)?;
    let mut script = MockScript::new();
    script.push_for(
        &prompt.text,
        &params,
        0,
        "1. The plot drags on forever.\n2. \"Every joke falls flat.\"\n3. A tedious, lifeless sequel.",
        None,
    );
    let seeds = propose_seeds(spec, "negative", 3, &params, &Gateway::mock(script))?;
    for s in seeds {
        println!("{} [{}] {:?}: {}", s.id, s.label, s.origin, s.manipulated_text(spec));
    }
    Ok(())
}
