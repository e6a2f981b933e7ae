//! Pulls the final rewritten sentence out of a chain response and judges it.
//!
//! Extraction rules, in priority order:
//!
//! 1. the last double-quoted span of at least three words;
//! 2. the text after the last final-step marker (`3.` for three-step chains,
//!    `2.` for two-step ones);
//! 3. the last non-empty line.
//!
//! When a final-step marker is present, rules 1 and 2 only look past it, so a
//! sentence quoted back in an earlier step is never mistaken for the answer.
//! Spans equal to an attribute descriptor and lines carrying the chain's own
//! instructions are skipped by every rule.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::Variant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionRule {
    LastQuoted,
    LastNumberedItem,
    LastNonemptyLine,
}

/// Quality judgment on one generation. Extraction yields the first five;
/// `unparseable` and `backend_error` are assigned by the pipeline when no
/// sentence could be obtained at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Ok,
    Empty,
    EchoOfSeed,
    MetaText,
    Overlong,
    Unparseable,
    BackendError,
}

impl Verdict {
    pub fn is_ok(self) -> bool {
        self == Verdict::Ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedGeneration {
    pub sentence: String,
    pub extraction_rule: ExtractionRule,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("response text is empty")]
    EmptyInput,
    #[error("no extraction rule matched the response")]
    Unparseable { raw: String },
    #[error("wanted {wanted} distinct sentences, found {}", found.len())]
    Shortfall { wanted: usize, found: Vec<String> },
    #[error("count must be at least 1")]
    ZeroCount,
}

/// Openers that mark chatter rather than a sentence.
pub const META_MARKERS: &[&str] = &[
    "here is",
    "here's",
    "here are",
    "sure,",
    "sure!",
    "sure.",
    "certainly",
    "of course",
    "as an ai",
    "i'm sorry",
    "i am sorry",
    "i cannot",
    "i can't",
];

/// Fragments of the chain's own instructions; text containing them is never
/// returned.
const INSTRUCTION_FRAGMENTS: &[&str] = &[
    "without any other explanation",
    "please think step by step",
    "what are some other attributes",
    "how to write a similar sentence",
    "how to switch the above sentence",
];

const MIN_QUOTED_WORDS: usize = 3;
const OVERLONG_FLOOR_WORDS: usize = 60;
const OVERLONG_SEED_FACTOR: usize = 4;
const NEAR_DUPLICATE_OVERLAP: f64 = 0.8;

static QUOTED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#""([^"\n]+)"|“([^”\n]+)”"#).unwrap());
static LIST_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:[-*•]\s+|\(?\d{1,3}[.):]\s*|\*\*\d{1,3}[.):]\*\*\s*)").unwrap());
static SENTENCE_LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^(?:the\s+)?(?:new|switched|rewritten|final|similar|manipulated)?\s*sentence\s*(?:is)?\s*:\s*").unwrap()
});

fn step_marker(step: u8) -> Regex {
    Regex::new(&format!(
        r"(?im)^[ \t]*(?:[#>]+[ \t]*)?(?:\*\*|__)?(?:step[ \t]*{step}\b[ \t]*[.):]?|{step}[ \t]*[.):])(?:\*\*|__)?[ \t]*"
    ))
    .unwrap()
}

#[derive(Debug, Clone, Default)]
pub struct ExtractOptions<'a> {
    pub seed_sentence: &'a str,
    pub final_step: Option<u8>,
    /// Attribute descriptors that appear in the prompt; quoted copies of them
    /// are not candidates.
    pub attributes: Vec<&'a str>,
}

impl<'a> ExtractOptions<'a> {
    pub fn for_variant(variant: Variant, seed_sentence: &'a str) -> Self {
        Self {
            seed_sentence,
            final_step: variant.final_step(),
            attributes: Vec::new(),
        }
    }
}

fn has_instruction(text: &str) -> bool {
    let lower = text.to_lowercase();
    INSTRUCTION_FRAGMENTS.iter().any(|f| lower.contains(f))
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Case-folded, punctuation-free, whitespace-collapsed form.
pub fn normalize_for_compare(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_ascii_punctuation() && !matches!(c, '“' | '”' | '‘' | '’'))
        .flat_map(char::to_lowercase)
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn clean(candidate: &str) -> String {
    let mut s = candidate.trim();
    s = s.trim_matches(|c: char| c == '*' || c == '_' || c.is_whitespace());
    let s = LIST_MARKER.replace(s, "");
    let s = SENTENCE_LABEL.replace(&s, "");
    strip_enclosing_quotes(s.trim()).trim().to_string()
}

fn strip_enclosing_quotes(s: &str) -> &str {
    for (open, close) in [('"', '"'), ('“', '”'), ('\'', '\''), ('`', '`')] {
        if s.len() >= 2 && s.starts_with(open) && s.ends_with(close) {
            let inner = &s[open.len_utf8()..s.len() - close.len_utf8()];
            if !inner.contains(close) {
                return inner;
            }
        }
    }
    s
}

fn quoted_candidate(region: &str, opts: &ExtractOptions<'_>) -> Option<String> {
    let attrs: Vec<String> = opts.attributes.iter().map(|a| normalize_for_compare(a)).collect();
    QUOTED
        .captures_iter(region)
        .filter_map(|c| c.get(1).or_else(|| c.get(2)).map(|m| m.as_str().trim().to_string()))
        .filter(|span| word_count(span) >= MIN_QUOTED_WORDS)
        .filter(|span| !has_instruction(span))
        .filter(|span| !attrs.contains(&normalize_for_compare(span)))
        .last()
}

fn numbered_candidate(region: &str) -> Option<String> {
    region
        .lines()
        .map(clean)
        .find(|l| !l.is_empty())
        .filter(|l| !has_instruction(l))
}

fn last_line_candidate(text: &str) -> Option<String> {
    text.lines()
        .rev()
        .find(|l| !l.trim().is_empty() && !has_instruction(l))
        .map(clean)
}

pub fn extract_final_sentence(raw: &str, seed_sentence: &str, variant: Variant) -> Result<ParsedGeneration, ParseError> {
    extract_with(raw, &ExtractOptions::for_variant(variant, seed_sentence))
}

pub fn extract_with(raw: &str, opts: &ExtractOptions<'_>) -> Result<ParsedGeneration, ParseError> {
    let text = raw.replace("\r\n", "\n");
    if text.trim().is_empty() {
        return Err(ParseError::EmptyInput);
    }
    let region = opts
        .final_step
        .and_then(|step| step_marker(step).find_iter(&text).last())
        .map(|m| &text[m.end()..]);

    let (sentence, rule) = if let Some(s) = quoted_candidate(region.unwrap_or(&text), opts) {
        (s, ExtractionRule::LastQuoted)
    } else if let Some(s) = region.and_then(numbered_candidate) {
        (s, ExtractionRule::LastNumberedItem)
    } else if let Some(s) = last_line_candidate(&text) {
        (s, ExtractionRule::LastNonemptyLine)
    } else {
        return Err(ParseError::Unparseable { raw: raw.to_string() });
    };

    let (verdict, note) = judge(&sentence, rule, opts.seed_sentence);
    Ok(ParsedGeneration {
        sentence,
        extraction_rule: rule,
        verdict,
        note,
    })
}

fn token_overlap(a: &str, b: &str) -> f64 {
    let ta: HashSet<&str> = a.split_whitespace().collect();
    let tb: HashSet<&str> = b.split_whitespace().collect();
    let union = ta.union(&tb).count();
    if union == 0 {
        return 0.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

fn judge(sentence: &str, rule: ExtractionRule, seed: &str) -> (Verdict, Option<String>) {
    if sentence.trim().is_empty() {
        return (Verdict::Empty, None);
    }
    let norm = normalize_for_compare(sentence);
    let seed_norm = normalize_for_compare(seed);
    if !seed_norm.is_empty() && norm == seed_norm {
        return (Verdict::EchoOfSeed, None);
    }
    if rule != ExtractionRule::LastQuoted {
        let lower = sentence.to_lowercase();
        if META_MARKERS.iter().any(|m| lower.starts_with(m)) || lower.contains("as an ai") {
            return (Verdict::MetaText, None);
        }
    }
    let limit = OVERLONG_FLOOR_WORDS.max(OVERLONG_SEED_FACTOR * word_count(seed));
    if word_count(sentence) > limit {
        return (Verdict::Overlong, None);
    }
    let overlap = token_overlap(&norm, &seed_norm);
    let note = (overlap >= NEAR_DUPLICATE_OVERLAP).then(|| format!("near-duplicate of seed (token overlap {overlap:.2})"));
    (Verdict::Ok, note)
}

/// Splits a seed-proposal response into up to `count` distinct sentences.
pub fn parse_seed_proposals(raw: &str, count: usize) -> Result<Vec<String>, ParseError> {
    if count == 0 {
        return Err(ParseError::ZeroCount);
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for line in raw.lines() {
        let s = clean(line);
        if s.is_empty() || s.ends_with(':') || has_instruction(&s) {
            continue;
        }
        let lower = s.to_lowercase();
        if META_MARKERS.iter().any(|m| lower.starts_with(m)) {
            continue;
        }
        if seen.insert(normalize_for_compare(&s)) {
            out.push(s);
            if out.len() == count {
                return Ok(out);
            }
        }
    }
    Err(ParseError::Shortfall { wanted: count, found: out })
}

/// One entry of a response fixture directory: `<name>.in` holds the raw
/// response, `<name>.expected` holds `key: value` header lines (`variant`,
/// `seed`, `verdict`, `rule`, optional `attr`, repeatable), a `---` line, and
/// the expected sentence. An expected body of `!unparseable` asserts that
/// extraction fails.
#[derive(Debug, Clone)]
pub struct ResponseFixture {
    pub name: String,
    pub raw: String,
    pub variant: Variant,
    pub seed: String,
    pub attributes: Vec<String>,
    pub verdict: Option<Verdict>,
    pub rule: Option<ExtractionRule>,
    pub expected: String,
}

impl ResponseFixture {
    pub fn check(&self) -> Result<(), String> {
        let opts = ExtractOptions {
            seed_sentence: &self.seed,
            final_step: self.variant.final_step(),
            attributes: self.attributes.iter().map(String::as_str).collect(),
        };
        let result = extract_with(&self.raw, &opts);
        if self.expected == "!unparseable" {
            return match result {
                Err(ParseError::Unparseable { .. }) | Err(ParseError::EmptyInput) => Ok(()),
                other => Err(format!("{}: expected failure, got {other:?}", self.name)),
            };
        }
        let got = result.map_err(|e| format!("{}: {e}", self.name))?;
        if got.sentence != self.expected {
            return Err(format!("{}: sentence {:?} != expected {:?}", self.name, got.sentence, self.expected));
        }
        if let Some(v) = self.verdict {
            if got.verdict != v {
                return Err(format!("{}: verdict {:?} != expected {:?}", self.name, got.verdict, v));
            }
        }
        if let Some(r) = self.rule {
            if got.extraction_rule != r {
                return Err(format!("{}: rule {:?} != expected {:?}", self.name, got.extraction_rule, r));
            }
        }
        Ok(())
    }
}

fn parse_enum<T: for<'de> Deserialize<'de>>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

pub fn load_fixtures(dir: impl AsRef<Path>) -> std::io::Result<Vec<ResponseFixture>> {
    let dir = dir.as_ref();
    let mut inputs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "in"))
        .collect();
    inputs.sort();
    let bad = |msg: String| std::io::Error::new(std::io::ErrorKind::InvalidData, msg);
    let mut fixtures = Vec::new();
    for input in inputs {
        let name = input.file_stem().unwrap().to_string_lossy().to_string();
        let raw = std::fs::read_to_string(&input)?;
        let expected_text = std::fs::read_to_string(input.with_extension("expected"))?;
        let (header, body) = expected_text
            .split_once("\n---\n")
            .ok_or_else(|| bad(format!("{name}.expected lacks a --- separator")))?;
        let mut fx = ResponseFixture {
            name: name.clone(),
            raw,
            variant: Variant::Cotam,
            seed: String::new(),
            attributes: Vec::new(),
            verdict: None,
            rule: None,
            expected: body.strip_suffix('\n').unwrap_or(body).to_string(),
        };
        for line in header.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| bad(format!("{name}: bad header line {line:?}")))?;
            let v = v.trim();
            match k.trim() {
                "variant" => fx.variant = v.parse().map_err(|e| bad(format!("{name}: {e}")))?,
                "seed" => fx.seed = v.to_string(),
                "attr" => fx.attributes.push(v.to_string()),
                "verdict" => fx.verdict = Some(parse_enum(v).map_err(|e| bad(format!("{name}: {e}")))?),
                "rule" => fx.rule = Some(parse_enum(v).map_err(|e| bad(format!("{name}: {e}")))?),
                other => return Err(bad(format!("{name}: unknown header key {other:?}"))),
            }
        }
        fixtures.push(fx);
    }
    Ok(fixtures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SEED: &str = "The movie is great.";

    #[test]
    fn case_study_shape() {
        let raw = "1. Attributes: Topic: Movie Review, Actor: Ford, Neeson\n2. Method: keep actors, flip opinion\n3. \"Ford and Neeson can't save this dull film.\"";
        let p = extract_final_sentence(raw, "Ford and Neeson make this film great.", Variant::Cotam).unwrap();
        assert_eq!(p.sentence, "Ford and Neeson can't save this dull film.");
        assert_eq!(p.extraction_rule, ExtractionRule::LastQuoted);
        assert_eq!(p.verdict, Verdict::Ok);
    }

    #[test]
    fn bare_sentence() {
        let p = extract_final_sentence("The movie is terrible.", SEED, Variant::Cotam).unwrap();
        assert_eq!(p.sentence, "The movie is terrible.");
        assert_eq!(p.extraction_rule, ExtractionRule::LastNonemptyLine);
        assert!(p.verdict.is_ok());
    }

    #[test]
    fn echo_detected() {
        let p = extract_final_sentence("the movie is GREAT", SEED, Variant::Cotam).unwrap();
        assert_eq!(p.verdict, Verdict::EchoOfSeed);
    }

    #[test]
    fn earlier_quotes_are_ignored_after_marker() {
        let raw = "1. The sentence \"The movie is great.\" is about film.\n2. Swap the adjective.\n3. The movie is awful.";
        let p = extract_final_sentence(raw, SEED, Variant::Cotam).unwrap();
        assert_eq!(p.sentence, "The movie is awful.");
        assert_eq!(p.extraction_rule, ExtractionRule::LastNumberedItem);
    }

    #[test]
    fn two_step_marker_for_flip() {
        let raw = "1. Replace \"great\" with \"awful\".\n2. The movie is awful.";
        let p = extract_final_sentence(raw, SEED, Variant::Flipda).unwrap();
        assert_eq!(p.sentence, "The movie is awful.");
        assert_eq!(p.extraction_rule, ExtractionRule::LastNumberedItem);
    }

    #[test]
    fn meta_text_only_without_quotes() {
        let p = extract_final_sentence("Sure, I can help with that.", SEED, Variant::CotamWoCot).unwrap();
        assert_eq!(p.verdict, Verdict::MetaText);
        let p = extract_final_sentence("Here is the sentence: \"The movie is truly awful.\"", SEED, Variant::CotamWoCot).unwrap();
        assert_eq!(p.verdict, Verdict::Ok);
        assert_eq!(p.sentence, "The movie is truly awful.");
    }

    #[test]
    fn overlong_and_empty() {
        let long = "word ".repeat(80);
        assert_eq!(extract_final_sentence(&long, SEED, Variant::Cotam).unwrap().verdict, Verdict::Overlong);
        assert_eq!(extract_final_sentence("\"\"", SEED, Variant::Cotam).unwrap().verdict, Verdict::Empty);
        assert_eq!(extract_final_sentence("  \n ", SEED, Variant::Cotam), Err(ParseError::EmptyInput));
    }

    #[test]
    fn instruction_echo_is_unparseable() {
        let raw = "3. Write such a sentence without any other explanation.";
        assert!(matches!(
            extract_final_sentence(raw, SEED, Variant::Cotam),
            Err(ParseError::Unparseable { .. })
        ));
    }

    #[test]
    fn attribute_quotes_skipped() {
        let opts = ExtractOptions {
            seed_sentence: "No one is making music.",
            final_step: Some(3),
            attributes: vec!["natural language inference: neutral"],
        };
        let raw = "3. To get \"natural language inference: neutral\": A man might be making music.";
        let p = extract_with(raw, &opts).unwrap();
        assert_eq!(p.extraction_rule, ExtractionRule::LastNumberedItem);
        assert!(p.sentence.ends_with("A man might be making music."));
    }

    #[test]
    fn near_duplicate_noted() {
        let p = extract_final_sentence("The movie is great today.", "The movie is great today!", Variant::Cotam).unwrap();
        assert_eq!(p.verdict, Verdict::EchoOfSeed);
        let p = extract_final_sentence("The movie is great and fun.", "The movie is great and fun today.", Variant::Cotam).unwrap();
        assert!(p.verdict.is_ok());
        assert!(p.note.unwrap().starts_with("near-duplicate"));
    }

    #[test]
    fn proposals_numbered_and_quoted() {
        let raw = (1..=10).map(|i| format!("{i}. \"Sentence number {i} is lovely.\"")).collect::<Vec<_>>().join("\n");
        let got = parse_seed_proposals(&raw, 10).unwrap();
        assert_eq!(got.len(), 10);
        assert_eq!(got[0], "Sentence number 1 is lovely.");
        assert_eq!(parse_seed_proposals(&raw, 3).unwrap().len(), 3);
    }

    #[test]
    fn proposals_dedupe_with_shortfall() {
        let mut lines: Vec<String> = (1..=8).map(|i| format!("Fine sentence {i}.")).collect();
        lines.push("Fine sentence 3.".into());
        lines.push("fine sentence 5".into());
        let raw = lines.join("\n");
        match parse_seed_proposals(&raw, 10) {
            Err(ParseError::Shortfall { wanted, found }) => {
                assert_eq!(wanted, 10);
                assert_eq!(found.len(), 8);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn proposals_skip_preamble() {
        let raw = "Here are 2 sentences:\n- A bright day.\n- A warm hug.";
        assert_eq!(parse_seed_proposals(raw, 2).unwrap(), ["A bright day.", "A warm hug."]);
        assert_eq!(parse_seed_proposals(raw, 0), Err(ParseError::ZeroCount));
    }

    proptest! {
        #[test]
        fn never_panics_never_returns_instruction(raw in ".{0,400}", step in prop::option::of(2u8..=3)) {
            let opts = ExtractOptions { seed_sentence: SEED, final_step: step, attributes: vec![] };
            if let Ok(p) = extract_with(&raw, &opts) {
                prop_assert!(!has_instruction(&p.sentence));
            }
            let _ = parse_seed_proposals(&raw, 3);
        }

        #[test]
        fn numbered_chains_with_instruction_lines(a in "[a-z ]{1,40}", b in "[a-z ]{1,40}") {
            let raw = format!("1. {a}\n2. {b}\n3. Write such a sentence without any other explanation.\n");
            if let Ok(p) = extract_with(&raw, &ExtractOptions { seed_sentence: SEED, final_step: Some(3), attributes: vec![] }) {
                prop_assert!(!p.sentence.to_lowercase().contains("without any other explanation"));
            }
        }
    }
}
