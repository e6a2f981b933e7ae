//! Regenerates `fixtures/*.mock`: scripted chat responses covering every
//! seed of the bundled SST-2 and AG-News pools for the cotam, cotda and
//! flipda variants.
//!
//! cargo run --example make_mock_fixtures

use attrmanip::corpus::{toy, SeedExample, TaskRegistry, TaskSpec};
use attrmanip::llm::{CompletionParams, MockScript};
use attrmanip::prompt::{enumerate_targets, render, Variant};

const MODEL: &str = "mock-model";
const POS: [&str; 5] = ["wonderful", "charming", "gripping", "moving", "brilliant"];
const NEG: [&str; 5] = ["dreadful", "tedious", "clumsy", "lifeless", "forgettable"];
const PLACES: [&str; 8] = ["Kenya", "Peru", "Norway", "Vietnam", "Chile", "Poland", "Ghana", "Nepal"];

fn news(topic: &str, place: &str, alt: bool) -> String {
    let t = match (topic, alt) {
        ("world", false) => "Leaders met in Geneva to discuss the ceasefire in {x}.",
        ("world", true) => "Elections in {x} drew record turnout amid protests.",
        ("sports", false) => "The {x} team clinched the championship in overtime.",
        ("sports", true) => "A late goal lifted the {x} side into the final.",
        ("business", false) => "Shares of {x} firms rallied after strong quarterly earnings.",
        ("business", true) => "The {x} central bank held interest rates steady.",
        ("scitech", false) => "Researchers in {x} unveiled a faster quantum chip.",
        _ => "A new {x} startup released an open-source AI model.",
    };
    t.replace("{x}", place)
}

/// (swapped word, replacement, rewritten sentence)
fn rewrite(task: &str, seed: &SeedExample, target: &str, replicate: u32) -> (String, String, String) {
    let text = seed.field("text").expect("single-text seed");
    match task {
        "sst2" => {
            let (from, to) = if seed.label == "positive" { (&POS, &NEG) } else { (&NEG, &POS) };
            let i = from.iter().position(|w| text.contains(w)).expect("lexicon word present");
            let same = seed.label == target;
            let j = if same { (i + 1 + replicate as usize) % 5 } else { i };
            let new = if same { from[j] } else { to[j] };
            (from[i].to_string(), new.to_string(), text.replace(from[i], new))
        }
        _ => {
            let place = PLACES.iter().find(|p| text.contains(*p)).expect("place present");
            let alt = news(&seed.label, place, false) == text;
            let s = if seed.label == target {
                let prefix = ["Reportedly, ", "On Monday, ", "According to officials, "][replicate as usize % 3];
                let base = news(target, place, alt);
                let mut chars = base.chars();
                let first = chars.next().unwrap().to_lowercase().collect::<String>();
                let body = format!("{first}{}", chars.as_str());
                format!("{prefix}{body}")
            } else {
                news(target, place, alt)
            };
            (seed.label.clone(), target.to_string(), s)
        }
    }
}

fn response(variant: Variant, spec: &TaskSpec, seed: &SeedExample, target: &str, replicate: u32) -> String {
    let (from, to, sentence) = rewrite(&spec.task_id, seed, target, replicate);
    match variant {
        Variant::Flipda => format!("1. Replace \"{from}\" with \"{to}\".\n2. {sentence}"),
        _ => format!(
            "1. Other attributes: the subject matter, a short declarative form, neutral register.\n\
             2. Keep the subject and structure, and change the wording so the sentence conveys {to}.\n\
             3. \"{sentence}\""
        ),
    }
}

fn main() {
    let registry = TaskRegistry::bundled();
    let out = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    std::fs::create_dir_all(&out).unwrap();
    for task in ["sst2", "agnews"] {
        let spec = registry.get(task).unwrap();
        let pool = toy::pool(spec).unwrap();
        let mut script = MockScript::new();
        for variant in [Variant::Cotam, Variant::Cotda, Variant::Flipda] {
            let params = CompletionParams::for_variant(MODEL, variant);
            for seed in &pool {
                if variant.is_switching() {
                    for t in enumerate_targets(spec, &seed.label).unwrap() {
                        let p = render(variant, seed, spec, Some(&t)).unwrap();
                        let note = Some(format!("{} {} -> {t}", variant, seed.id));
                        script.push_for(&p.text, &params, 0, response(variant, spec, seed, &t, 0), note);
                    }
                } else {
                    let p = render(variant, seed, spec, None).unwrap();
                    for r in 0..spec.n_labels() as u32 - 1 {
                        let note = Some(format!("{} {} r{r}", variant, seed.id));
                        script.push_for(&p.text, &params, r, response(variant, spec, seed, &seed.label, r), note);
                    }
                }
            }
        }
        let path = out.join(format!("{task}.mock"));
        std::fs::write(&path, script.to_jsonl()).unwrap();
        println!("{}: {} scripted responses", path.display(), script.len());
    }
}
