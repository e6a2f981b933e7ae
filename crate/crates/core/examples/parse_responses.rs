//! Extracts the final sentence from typical chat responses and shows the
//! quality verdict for each.
//!
//! cargo run --example parse_responses

use attrmanip::parse::{extract_final_sentence, parse_seed_proposals};
use attrmanip::prompt::Variant;

fn main() {
    let seed = "The movie is great.";
    let responses = [
        "1. Attributes: length, topic.\n2. Swap the adjective.\n3. \"The movie is dreadful.\"",
        "**Step 3:** The movie is dreadful.",
        "3. \"The movie is great.\"",
        "I'm sorry, but I can't help with rewriting this sentence.",
        "",
    ];
    for raw in responses {
        match extract_final_sentence(raw, seed, Variant::Cotam) {
            Ok(p) => println!("{:?} via {:?}: {:?}", p.verdict, p.extraction_rule, p.sentence),
            Err(e) => println!("error: {e}"),
        }
    }
    let proposals = parse_seed_proposals("1. A joyful film.\n2. \"A warm story.\"\n3. A bright cast.", 3);
    println!("proposals: {proposals:?}");
}
