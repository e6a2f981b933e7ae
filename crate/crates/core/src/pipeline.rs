//! Generation runs: render → complete → parse → record for every
//! (seed, target) pair, then assembly of the training set.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Origin, SeedExample, SeedSet, TaskSpec};
use crate::digest::PartsHasher;
use crate::llm::{CompletionParams, CompletionRequest, Gateway, LlmError};
use crate::parse::{extract_with, parse_seed_proposals, ExtractOptions, ExtractionRule, ParseError, Verdict};
use crate::prompt::{enumerate_targets, render, render_seed_proposal, PromptError, Variant, TEMPLATE_VERSION};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("variant {0} cannot drive a generation run")]
    UnsupportedVariant(Variant),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub seed_id: String,
    pub variant: Variant,
    pub source_label: String,
    pub target_label: String,
    /// Sample index for repeated same-label draws; 0 for switching variants.
    pub replicate: u32,
    pub prompt_digest: String,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction_rule: Option<ExtractionRule>,
    pub verdict: Verdict,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GenerationRecord {
    /// Stable id of the generated example.
    pub fn member_id(&self) -> String {
        if self.variant.is_switching() {
            format!("{}~{}", self.seed_id, self.target_label)
        } else {
            format!("{}~r{}", self.seed_id, self.replicate)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRun {
    pub run_id: String,
    pub task_id: String,
    pub variant: Variant,
    pub params: CompletionParams,
    pub template_version: String,
    pub records: Vec<GenerationRecord>,
}

impl GenerationRun {
    pub fn attempted(&self) -> usize {
        self.records.len()
    }

    pub fn realized(&self) -> usize {
        self.records.iter().filter(|r| r.verdict.is_ok()).count()
    }

    /// True when some records failed at the backend rather than the parser.
    pub fn has_backend_failures(&self) -> bool {
        self.records.iter().any(|r| r.verdict == Verdict::BackendError)
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub workers: usize,
    /// Retry a failed generation once with a fresh (cache-bypassing) request.
    pub retry_failed: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 4,
            retry_failed: true,
        }
    }
}

/// Identity of a run: the seed set, variant, parameters and template version.
pub fn run_id(seeds: &SeedSet, variant: Variant, params: &CompletionParams) -> String {
    let mut h = PartsHasher::new("attrmanip/run/v1");
    h.part(serde_json::to_vec(seeds).expect("seed set serializes"))
        .part(variant.as_str())
        .part(serde_json::to_vec(params).expect("params serialize"))
        .part(TEMPLATE_VERSION);
    h.finish()
}

struct WorkItem<'a> {
    seed: &'a SeedExample,
    target: Option<String>,
    replicate: u32,
}

fn work_items<'a>(seeds: &'a SeedSet, variant: Variant, spec: &TaskSpec) -> Result<Vec<WorkItem<'a>>, PipelineError> {
    let mut items = Vec::new();
    for seed in &seeds.members {
        if variant.is_switching() {
            for target in enumerate_targets(spec, &seed.label)? {
                items.push(WorkItem {
                    seed,
                    target: Some(target),
                    replicate: 0,
                });
            }
        } else {
            spec.check_label(&seed.label)?;
            for r in 0..spec.n_labels().saturating_sub(1) as u32 {
                items.push(WorkItem {
                    seed,
                    target: None,
                    replicate: r,
                });
            }
        }
    }
    Ok(items)
}

fn generate_one(
    item: &WorkItem<'_>,
    variant: Variant,
    spec: &TaskSpec,
    params: &CompletionParams,
    gateway: &Gateway,
    opts: &RunOptions,
) -> Result<GenerationRecord, PipelineError> {
    let prompt = render(variant, item.seed, spec, item.target.as_deref())?;
    let seed_sentence = item.seed.manipulated_text(spec);
    let mut attributes = vec![prompt.source_attr.as_str()];
    if let Some(t) = &prompt.target_attr {
        attributes.push(t);
    }
    let extract = ExtractOptions {
        seed_sentence,
        final_step: variant.final_step(),
        attributes,
    };
    let max_attempts = if opts.retry_failed { 2 } else { 1 };
    let mut record = GenerationRecord {
        seed_id: item.seed.id.clone(),
        variant,
        source_label: item.seed.label.clone(),
        target_label: item.target.clone().unwrap_or_else(|| item.seed.label.clone()),
        replicate: item.replicate,
        prompt_digest: String::new(),
        raw_text: String::new(),
        sentence: None,
        extraction_rule: None,
        verdict: Verdict::Unparseable,
        attempts: 0,
        note: None,
        error: None,
    };
    for attempt in 1..=max_attempts {
        record.attempts = attempt;
        let req = CompletionRequest {
            prompt: &prompt.text,
            params,
            draw: item.replicate,
            attempt,
        };
        let resp = match gateway.complete_request(&req) {
            Ok(r) => r,
            Err(e) if e.is_configuration() => return Err(e.into()),
            Err(e) => {
                record.prompt_digest = crate::llm::cache_key(&prompt.text, params, item.replicate);
                record.raw_text.clear();
                record.sentence = None;
                record.extraction_rule = None;
                record.verdict = Verdict::BackendError;
                record.error = Some(e.to_string());
                continue;
            }
        };
        record.prompt_digest = resp.request_digest;
        record.raw_text = resp.text;
        record.error = None;
        match extract_with(&record.raw_text, &extract) {
            Ok(parsed) => {
                record.verdict = parsed.verdict;
                record.extraction_rule = Some(parsed.extraction_rule);
                record.note = parsed.note;
                record.sentence = Some(parsed.sentence);
                if record.verdict.is_ok() {
                    break;
                }
            }
            Err(e) => {
                record.verdict = Verdict::Unparseable;
                record.extraction_rule = None;
                record.sentence = None;
                record.note = None;
                record.error = Some(e.to_string());
            }
        }
    }
    if !record.verdict.is_ok() {
        log::info!(
            "dropping generation {} after {} attempt(s): {:?}",
            record.member_id(),
            record.attempts,
            record.verdict
        );
    }
    Ok(record)
}

/// Generates one record per (seed, target) pair for switching variants and
/// N−1 same-label replicates per seed for the label-preserving chain.
/// Per-record failures are recorded; only configuration errors abort.
pub fn run_generation(
    seeds: &SeedSet,
    variant: Variant,
    spec: &TaskSpec,
    params: &CompletionParams,
    gateway: &Gateway,
    opts: &RunOptions,
) -> Result<GenerationRun, PipelineError> {
    if variant == Variant::SeedProposal {
        return Err(PipelineError::UnsupportedVariant(variant));
    }
    params.validate()?;
    let items = work_items(seeds, variant, spec)?;
    let slots: Vec<Mutex<Option<GenerationRecord>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let first_error: Mutex<Option<PipelineError>> = Mutex::new(None);
    let workers = opts.workers.clamp(1, items.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                match generate_one(item, variant, spec, params, gateway, opts) {
                    Ok(rec) => *slots[i].lock().expect("slot lock") = Some(rec),
                    Err(e) => {
                        abort.store(true, Ordering::SeqCst);
                        first_error.lock().expect("error lock").get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });

    if let Some(e) = first_error.into_inner().expect("error lock") {
        return Err(e);
    }
    let records = slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every item produced a record"))
        .collect();
    Ok(GenerationRun {
        run_id: run_id(seeds, variant, params),
        task_id: spec.task_id.clone(),
        variant,
        params: params.clone(),
        template_version: TEMPLATE_VERSION.to_string(),
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Seed,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingMember {
    pub example: SeedExample,
    pub provenance: Provenance,
    /// The seed this member is or was generated from.
    pub seed_id: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub seeds: usize,
    pub attempted: usize,
    pub realized: usize,
}

impl Budget {
    pub fn dropped(&self) -> usize {
        self.attempted - self.realized
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub task_id: String,
    pub members: Vec<TrainingMember>,
    pub budget: Budget,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn label_histogram(&self, spec: &TaskSpec) -> Vec<(String, usize)> {
        spec.labels
            .iter()
            .map(|l| (l.clone(), self.members.iter().filter(|m| &m.example.label == l).count()))
            .collect()
    }
}

/// Builds the generated example a record describes: the seed with its
/// manipulated field replaced and the target label applied.
pub fn generated_example(record: &GenerationRecord, seed: &SeedExample, spec: &TaskSpec) -> Option<SeedExample> {
    let sentence = record.sentence.as_ref().filter(|_| record.verdict.is_ok())?;
    let mut ex = seed.clone();
    ex.id = record.member_id();
    ex.fields.insert(spec.manipulated_field.clone(), sentence.clone());
    ex.label = record.target_label.clone();
    Some(ex)
}

/// Members in seed order; each seed (when included) precedes its ok-verdict
/// generations, which follow target order. Records of seeds not in `seeds`
/// are ignored, so a run over a large pool serves any sampled subset.
pub fn assemble_training_set(run: &GenerationRun, seeds: &[SeedExample], spec: &TaskSpec, include_seeds: bool) -> TrainingSet {
    let mut members = Vec::new();
    let mut budget = Budget {
        seeds: seeds.len(),
        ..Budget::default()
    };
    for seed in seeds {
        if include_seeds {
            members.push(TrainingMember {
                example: seed.clone(),
                provenance: Provenance::Seed,
                seed_id: seed.id.clone(),
            });
        }
        for rec in run.records.iter().filter(|r| r.seed_id == seed.id) {
            budget.attempted += 1;
            if let Some(ex) = generated_example(rec, seed, spec) {
                budget.realized += 1;
                members.push(TrainingMember {
                    example: ex,
                    provenance: Provenance::Generated,
                    seed_id: seed.id.clone(),
                });
            }
        }
    }
    TrainingSet {
        task_id: spec.task_id.clone(),
        members,
        budget,
    }
}

/// Asks the model for `count` fresh examples of `label`. A shortfall returns
/// [`ParseError::Shortfall`] with the sentences that were usable.
pub fn propose_seeds(
    spec: &TaskSpec,
    label: &str,
    count: usize,
    params: &CompletionParams,
    gateway: &Gateway,
) -> Result<Vec<SeedExample>, PipelineError> {
    let prompt = render_seed_proposal(spec, label, count)?;
    let resp = gateway.complete(&prompt, params)?;
    let sentences = parse_seed_proposals(&resp.text, count)?;
    Ok(sentences
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut ex = SeedExample::single(format!("{}-llm-{label}-{}", spec.task_id, i + 1), s, label);
            ex.origin = Origin::LlmProposed;
            ex
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{sample_seed_set, toy, SamplingMode, TaskRegistry};
    use crate::llm::MockScript;

    fn spec(id: &str) -> TaskSpec {
        TaskRegistry::bundled().get(id).unwrap().clone()
    }

    /// Scripts a clean answer for every prompt of the run.
    fn script_all(seeds: &SeedSet, variant: Variant, spec: &TaskSpec, params: &CompletionParams) -> MockScript {
        let mut script = MockScript::new();
        for item in work_items(seeds, variant, spec).unwrap() {
            let p = render(variant, item.seed, spec, item.target.as_deref()).unwrap();
            let answer = format!(
                "1. Attributes: length, tone\n2. Adjust it.\n3. \"Rewritten {} toward {}.\"",
                item.seed.id,
                item.target.as_deref().unwrap_or("same")
            );
            script.push_for(&p.text, params, item.replicate, answer, None);
        }
        script
    }

    #[test]
    fn binary_switch_targets_opposite() {
        let s = spec("sst2");
        let pool = toy::pool(&s).unwrap();
        let seeds = sample_seed_set(&pool, &s, SamplingMode::NWayKShot, 10, 0).unwrap();
        let params = CompletionParams::for_variant("mock-model", Variant::Cotam);
        let gw = Gateway::mock(script_all(&seeds, Variant::Cotam, &s, &params));
        let run = run_generation(&seeds, Variant::Cotam, &s, &params, &gw, &RunOptions::default()).unwrap();
        assert_eq!(run.attempted(), 20);
        assert_eq!(run.realized(), 20);
        for r in &run.records {
            assert_ne!(r.source_label, r.target_label);
        }
        let ts = assemble_training_set(&run, &seeds.members, &s, false);
        assert_eq!(ts.len(), 20);
        let ts = assemble_training_set(&run, &seeds.members, &s, true);
        assert_eq!(ts.len(), 40);
        assert_eq!(ts.label_histogram(&s), [("positive".into(), 20), ("negative".into(), 20)]);
    }

    #[test]
    fn four_way_cotda_replicates() {
        let s = spec("agnews");
        let pool = toy::pool(&s).unwrap();
        let seeds = sample_seed_set(&pool, &s, SamplingMode::NWayKShot, 10, 5).unwrap();
        let params = CompletionParams::for_variant("mock-model", Variant::Cotda);
        assert_eq!(params.temperature, 0.1);
        let gw = Gateway::mock(script_all(&seeds, Variant::Cotda, &s, &params));
        let run = run_generation(&seeds, Variant::Cotda, &s, &params, &gw, &RunOptions::default()).unwrap();
        assert_eq!(run.attempted(), 120);
        assert!(run.records.iter().all(|r| r.source_label == r.target_label));
        let digests: std::collections::HashSet<_> = run.records.iter().map(|r| &r.prompt_digest).collect();
        assert_eq!(digests.len(), 120);
    }

    #[test]
    fn failed_parse_is_retried_then_dropped() {
        let s = spec("sst2");
        let pool = toy::pool(&s).unwrap();
        let seeds = sample_seed_set(&pool, &s, SamplingMode::NWayKShot, 2, 0).unwrap();
        let params = CompletionParams::for_variant("m", Variant::Cotam);
        let mut script = MockScript::new();
        for (i, seed) in seeds.members.iter().enumerate() {
            let target = enumerate_targets(&s, &seed.label).unwrap().remove(0);
            let p = render(Variant::Cotam, seed, &s, Some(&target)).unwrap();
            match i {
                // echo twice: dropped
                0 => {
                    script.push_for(&p.text, &params, 0, format!("\"{}\"", seed.manipulated_text(&s)), None);
                }
                // bad first, good second: kept with two attempts
                1 => {
                    script.push_for(&p.text, &params, 0, "Sure, here you go.", None);
                    script.push_for(&p.text, &params, 0, "3. \"A different sentence entirely.\"", None);
                }
                _ => {
                    script.push_for(&p.text, &params, 0, format!("3. \"Generated sentence {i} here.\""), None);
                }
            }
        }
        let gw = Gateway::mock(script);
        let run = run_generation(&seeds, Variant::Cotam, &s, &params, &gw, &RunOptions::default()).unwrap();
        assert_eq!(run.records[0].verdict, Verdict::EchoOfSeed);
        assert_eq!(run.records[0].attempts, 2);
        assert_eq!(run.records[1].verdict, Verdict::Ok);
        assert_eq!(run.records[1].attempts, 2);
        let ts = assemble_training_set(&run, &seeds.members, &s, true);
        assert_eq!(ts.budget.attempted, 4);
        assert_eq!(ts.budget.realized, 3);
        assert_eq!(ts.budget.dropped(), 1);
        assert_eq!(ts.len(), 7);
    }

    #[test]
    fn unscripted_prompt_aborts() {
        let s = spec("sst2");
        let pool = toy::pool(&s).unwrap();
        let seeds = sample_seed_set(&pool, &s, SamplingMode::NWayKShot, 1, 0).unwrap();
        let params = CompletionParams::new("m", 0.0);
        let gw = Gateway::mock(MockScript::new());
        let err = run_generation(&seeds, Variant::Cotam, &s, &params, &gw, &RunOptions::default()).unwrap_err();
        assert!(matches!(err, PipelineError::Llm(LlmError::Unscripted { .. })));
    }

    #[test]
    fn one_way_seeds_yield_unseen_labels() {
        let s = spec("sst2");
        let pool = toy::pool(&s).unwrap();
        let seeds = sample_seed_set(&pool, &s, SamplingMode::OneWayKShot, 10, 2).unwrap();
        let params = CompletionParams::new("m", 0.0);
        let gw = Gateway::mock(script_all(&seeds, Variant::Cotam, &s, &params));
        let run = run_generation(&seeds, Variant::Cotam, &s, &params, &gw, &RunOptions::default()).unwrap();
        let ts = assemble_training_set(&run, &seeds.members, &s, false);
        assert_eq!(ts.len(), 10);
        assert!(ts.members.iter().all(|m| m.example.label == "negative"));
    }

    #[test]
    fn generated_members_inherit_context() {
        let s = spec("mnli");
        let pool = toy::pool(&s).unwrap();
        let seeds = sample_seed_set(&pool, &s, SamplingMode::NWayKShot, 2, 0).unwrap();
        let params = CompletionParams::new("m", 0.0);
        let gw = Gateway::mock(script_all(&seeds, Variant::Cotam, &s, &params));
        let run = run_generation(&seeds, Variant::Cotam, &s, &params, &gw, &RunOptions { workers: 3, retry_failed: true }).unwrap();
        let ts = assemble_training_set(&run, &seeds.members, &s, true);
        assert_eq!(ts.len(), 6 * 3);
        for m in ts.members.iter().filter(|m| m.provenance == Provenance::Generated) {
            let seed = seeds.members.iter().find(|x| x.id == m.seed_id).unwrap();
            assert_eq!(m.example.field("text1"), seed.field("text1"));
            assert_ne!(m.example.field("text2"), seed.field("text2"));
        }
    }

    #[test]
    fn proposals_become_llm_seeds() {
        let s = spec("sst2");
        let params = CompletionParams::new("m", 0.0);
        let prompt = render_seed_proposal(&s, "positive", 3).unwrap();
        let mut script = MockScript::new();
        script.push_for(&prompt.text, &params, 0, "1. A joyful film.\n2. A warm story.\n3. A bright cast.", None);
        let gw = Gateway::mock(script);
        let seeds = propose_seeds(&s, "positive", 3, &params, &gw).unwrap();
        assert_eq!(seeds.len(), 3);
        assert!(seeds.iter().all(|e| e.origin == Origin::LlmProposed && e.label == "positive"));
        assert_eq!(seeds[0].id, "sst2-llm-positive-1");
    }

    #[test]
    fn run_is_independent_of_worker_count() {
        let s = spec("agnews");
        let pool = toy::pool(&s).unwrap();
        let seeds = sample_seed_set(&pool, &s, SamplingMode::NWayKShot, 3, 1).unwrap();
        let params = CompletionParams::new("m", 0.0);
        let a = run_generation(&seeds, Variant::Flipda, &s, &params, &Gateway::mock(script_all(&seeds, Variant::Flipda, &s, &params)), &RunOptions { workers: 1, retry_failed: true }).unwrap();
        let b = run_generation(&seeds, Variant::Flipda, &s, &params, &Gateway::mock(script_all(&seeds, Variant::Flipda, &s, &params)), &RunOptions { workers: 8, retry_failed: true }).unwrap();
        assert_eq!(a, b);
    }
}
