//! Multi-run evaluation: sample a seed set per run, look up its generations,
//! embed, classify the test set, and summarize.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::classify::{evaluate, Algorithm, LabeledSet};
use super::EvalError;
use crate::corpus::{sample_seed_set_with, SampleRequest, SamplingMode, SeedExample, TaskSpec};
use crate::digest::json_digest;
use crate::embed::EmbeddingProvider;
use crate::pipeline::{assemble_training_set, GenerationRun};

/// The text an example is embedded as: its text fields joined by newlines.
pub fn embedding_text(spec: &TaskSpec, ex: &SeedExample) -> String {
    spec.shape
        .text_fields()
        .iter()
        .filter_map(|f| ex.field(f))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainSource {
    /// The sampled seeds alone.
    Seeds,
    /// Seeds plus their ok-verdict generations.
    Augmented,
    /// Generations without the seeds.
    GeneratedOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub runs: usize,
    /// Run `i` samples with rng seed `base_seed + i`.
    pub base_seed: u64,
    pub mode: SamplingMode,
    pub shots: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub one_way_label: Option<String>,
    pub algorithm: Algorithm,
    pub train_source: TrainSource,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            runs: 10,
            base_seed: 0,
            mode: SamplingMode::NWayKShot,
            shots: 10,
            one_way_label: None,
            algorithm: Algorithm::Nc,
            train_source: TrainSource::Augmented,
        }
    }
}

impl Protocol {
    pub fn rng_seeds(&self) -> Vec<u64> {
        (0..self.runs as u64).map(|i| self.base_seed.wrapping_add(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run: usize,
    pub rng_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub train_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task_id: String,
    pub method: String,
    pub algorithm: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub provider_id: String,
    pub shots: usize,
    pub accuracies: Vec<f64>,
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub std: Option<f64>,
    pub run_count: usize,
    pub config_digest: String,
    pub partial: bool,
    pub failed_runs: Vec<usize>,
    #[serde(skip)]
    pub runs: Vec<RunOutcome>,
}

/// Mean and population standard deviation, computed on data shifted by the
/// first value so identical runs give exactly that value and zero spread.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    let &x0 = xs.first()?;
    let n = xs.len() as f64;
    let d: f64 = xs.iter().map(|x| x - x0).sum();
    let d2: f64 = xs.iter().map(|x| (x - x0).powi(2)).sum();
    let var = ((d2 - d * d / n) / n).max(0.0);
    Some((x0 + d / n, var.sqrt()))
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ReportLine {
    Run(RunOutcome),
    Summary(EvalReport),
}

impl EvalReport {
    fn from_runs(header: ReportHeader, runs: Vec<RunOutcome>) -> Self {
        let accuracies: Vec<f64> = runs.iter().filter_map(|r| r.accuracy).collect();
        let failed_runs: Vec<usize> = runs.iter().filter(|r| r.accuracy.is_none()).map(|r| r.run).collect();
        let ms = mean_std(&accuracies);
        Self {
            task_id: header.task_id,
            method: header.method,
            algorithm: header.algorithm.name().to_string(),
            k: header.algorithm.k(),
            provider_id: header.provider_id,
            shots: header.shots,
            run_count: runs.len(),
            mean: ms.map(|m| m.0),
            std: ms.map(|m| m.1),
            accuracies,
            config_digest: header.config_digest,
            partial: !failed_runs.is_empty(),
            failed_runs,
            runs,
        }
    }

    /// One JSON line per run, then a summary line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.runs {
            out.push_str(&serde_json::to_string(&ReportLine::Run(r.clone())).expect("run serializes"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&ReportLine::Summary(self.clone())).expect("summary serializes"));
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, EvalError> {
        let mut runs = Vec::new();
        let mut summary = None;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: ReportLine =
                serde_json::from_str(line).map_err(|e| EvalError::Report(format!("line {}: {e}", i + 1)))?;
            match parsed {
                ReportLine::Run(r) => runs.push(r),
                ReportLine::Summary(s) => summary = Some(s),
            }
        }
        let mut s = summary.ok_or_else(|| EvalError::Report("no summary line".into()))?;
        s.runs = runs;
        Ok(s)
    }

    /// True when mean, std and counts follow from the per-run list.
    pub fn is_consistent(&self) -> bool {
        let accs: Vec<f64> = self.runs.iter().filter_map(|r| r.accuracy).collect();
        let ms = mean_std(&accs);
        accs == self.accuracies
            && self.run_count == self.runs.len()
            && ms.map(|m| m.0) == self.mean
            && ms.map(|m| m.1) == self.std
            && self.partial == !self.failed_runs.is_empty()
    }
}

struct ReportHeader {
    task_id: String,
    method: String,
    algorithm: Algorithm,
    provider_id: String,
    shots: usize,
    config_digest: String,
}

pub fn method_name(train_source: TrainSource, generations: Option<&GenerationRun>) -> String {
    match (train_source, generations) {
        (TrainSource::Seeds, _) | (_, None) => "seeds_only".to_string(),
        (TrainSource::Augmented, Some(g)) => g.variant.as_str().to_string(),
        (TrainSource::GeneratedOnly, Some(g)) => format!("{}_generated_only", g.variant),
    }
}

/// Runs the protocol. Per-run failures (sampling capacity, missing
/// generations, empty classes) mark the report partial; embedding failures
/// abort.
pub fn multi_run(
    spec: &TaskSpec,
    pool: &[SeedExample],
    generations: Option<&GenerationRun>,
    test: &[SeedExample],
    provider: &dyn EmbeddingProvider,
    protocol: &Protocol,
) -> Result<EvalReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    if protocol.train_source != TrainSource::Seeds && generations.is_none() {
        return Err(EvalError::MissingGenerations);
    }
    let provider_id = provider.id();
    let config_digest = json_digest(&serde_json::json!({
        "task": spec,
        "protocol": protocol,
        "provider": provider_id,
        "test": test.iter().map(|e| (&e.id, embedding_text(spec, e), &e.label)).collect::<Vec<_>>(),
        "generation_run": generations.map(|g| &g.run_id),
    }));

    let mut train_sets: Vec<Result<Vec<(String, String)>, String>> = Vec::new();
    for &rng_seed in &protocol.rng_seeds() {
        let req = SampleRequest {
            mode: protocol.mode,
            k: protocol.shots,
            rng_seed,
            one_way_label: protocol.one_way_label.clone(),
        };
        let built = sample_seed_set_with(pool, spec, &req)
            .map_err(|e| e.to_string())
            .and_then(|seeds| training_pairs(spec, &seeds.members, generations, protocol.train_source));
        train_sets.push(built);
    }

    let mut texts: BTreeSet<String> = test.iter().map(|e| embedding_text(spec, e)).collect();
    for set in train_sets.iter().flatten() {
        texts.extend(set.iter().map(|(_, t)| t.clone()));
    }
    let texts: Vec<&str> = texts.iter().map(String::as_str).collect();
    let vectors = provider.embed_batch(&texts)?;
    let lookup: HashMap<&str, &[f64]> = texts.iter().copied().zip(vectors.iter().map(|v| v.values.as_slice())).collect();
    let test_items: Vec<(&str, &[f64])> = test
        .iter()
        .map(|e| (e.label.as_str(), lookup[embedding_text(spec, e).as_str()]))
        .collect();

    let mut runs = Vec::new();
    for (i, (set, rng_seed)) in train_sets.into_iter().zip(protocol.rng_seeds()).enumerate() {
        let mut outcome = RunOutcome {
            run: i,
            rng_seed,
            accuracy: None,
            train_size: 0,
            error: None,
        };
        match set {
            Ok(pairs) => {
                outcome.train_size = pairs.len();
                let result = LabeledSet::new(&spec.labels, pairs.iter().map(|(l, t)| (l.as_str(), lookup[t.as_str()])))
                    .and_then(|train| evaluate(train, test_items.iter().copied(), protocol.algorithm));
                match result {
                    Ok(acc) => outcome.accuracy = Some(acc),
                    Err(e) => outcome.error = Some(e.to_string()),
                }
            }
            Err(e) => outcome.error = Some(e),
        }
        if let Some(e) = &outcome.error {
            log::warn!("evaluation run {i} failed: {e}");
        }
        runs.push(outcome);
    }

    Ok(EvalReport::from_runs(
        ReportHeader {
            task_id: spec.task_id.clone(),
            method: method_name(protocol.train_source, generations),
            algorithm: protocol.algorithm,
            provider_id,
            shots: protocol.shots,
            config_digest,
        },
        runs,
    ))
}

fn training_pairs(
    spec: &TaskSpec,
    seeds: &[SeedExample],
    generations: Option<&GenerationRun>,
    source: TrainSource,
) -> Result<Vec<(String, String)>, String> {
    let pair = |e: &SeedExample| (e.label.clone(), embedding_text(spec, e));
    let Some(run) = generations.filter(|_| source != TrainSource::Seeds) else {
        return Ok(seeds.iter().map(pair).collect());
    };
    if let Some(s) = seeds.iter().find(|s| !run.records.iter().any(|r| r.seed_id == s.id)) {
        return Err(format!("generation run {} has no records for seed {}", run.run_id, s.id));
    }
    let ts = assemble_training_set(run, seeds, spec, source == TrainSource::Augmented);
    Ok(ts.members.iter().map(|m| pair(&m.example)).collect())
}
