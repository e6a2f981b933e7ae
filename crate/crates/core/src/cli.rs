//! Command-line entry point. Exit codes: 0 ok, 1 usage, 2 data error,
//! 3 backend error, 4 partial run.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, RunConfig};
use crate::corpus::{
    load_dataset, sample_seed_set_with, toy, CorpusError, Origin, SampleRequest, SamplingMode, SeedExample, SeedSet,
    TaskRegistry, TaskSpec,
};
use crate::embed::{provider_from_spec, CachedProvider, EmbedError, EmbeddingProvider};
use crate::eval::{
    comparison_table, embedding_text, manifest_table, multi_run, pair_plot, Algorithm, AnnotatedPoint, EvalError,
    EvalReport, Protocol, Role, TrainSource,
};
use crate::llm::{CompletionParams, Gateway, HttpBackend, LlmError, MockScript, ResponseCache};
use crate::pipeline::{assemble_training_set, run_generation, PipelineError, Provenance, RunOptions};
use crate::prompt::{PromptError, Variant};
use crate::store::{load_manifest, load_run, persist_run, RunArtifacts, RunContext, StoreError, StoredRun};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

/// Model id the bundled mock scripts were recorded with.
pub const MOCK_MODEL: &str = "mock-model";

const SST2_MOCK: &str = include_str!("../fixtures/sst2.mock");
const AGNEWS_MOCK: &str = include_str!("../fixtures/agnews.mock");

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: msg.into(),
        }
    }

    pub fn backend(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_BACKEND,
            message: msg.into(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::UnknownTask(_) => Self::usage(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        Self::backend(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Llm(e) => e.into(),
            PipelineError::Prompt(e) => e.into(),
            PipelineError::Corpus(e) => e.into(),
            PipelineError::Parse(e) => Self::backend(e.to_string()),
            PipelineError::UnsupportedVariant(_) => Self::usage(e.to_string()),
        }
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::Transport(_) | EmbedError::Protocol(_) => Self::backend(e.to_string()),
            EmbedError::UnknownProvider(_) => Self::usage(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Embed(e) => e.into(),
            _ => Self::data(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::data(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(name = "attrmanip", version, about = "Label-switching data generation and embedding-space evaluation")]
struct Cli {
    /// Flat `key = value` config file; flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Task registry JSON (default: the bundled registry)
    #[arg(long, global = true, value_name = "FILE")]
    tasks: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a dataset file against a task
    Ingest(IngestArgs),
    /// Sample a seed set and print it as JSON
    Sample(SampleArgs),
    /// Run a generation and persist it as a manifest-tracked run
    Generate(GenerateArgs),
    /// Embed the texts of a run or dataset into an embedding file
    Embed(EmbedArgs),
    /// Nearest-centroid or KNN evaluation over repeated seed samples
    Eval(EvalArgs),
    /// Project seed/generation pairs to 2-D and emit plot data
    Pca(PcaArgs),
    /// Aggregate manifests and evaluation reports into comparison tables
    Report(ReportArgs),
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// Task id from the registry
    #[arg(long)]
    task: Option<String>,
    /// Dataset JSONL (default: the bundled toy pool for the task)
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct SamplingArgs {
    /// Seeds per label
    #[arg(long)]
    k: Option<usize>,
    /// n_way_k_shot, one_way_k_shot, one_way_nk_shot or llm_proposed
    #[arg(long)]
    mode: Option<String>,
    /// Sampling rng seed
    #[arg(long)]
    seed: Option<u64>,
    /// Label used by the one-way modes (default: first label)
    #[arg(long)]
    one_way_label: Option<String>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Keep only this many examples as the generation pool (rng from --seed)
    #[arg(long, value_name = "N")]
    pool_size: Option<usize>,
    /// Split --pool-size evenly across labels (true/false, default true)
    #[arg(long)]
    balanced: Option<bool>,
    /// Sampling rng seed for --pool-size
    #[arg(long)]
    seed: Option<u64>,
    /// Write the validated dataset (with ids) here
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Write the seed set here instead of stdout
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Use every pool example as a seed (k = size of the smallest label)
    #[arg(long)]
    all: bool,
    /// cotam, cotda, flipda, cotam_wo_what, cotam_wo_how or cotam_wo_cot
    #[arg(long)]
    variant: Option<String>,
    /// mock or http
    #[arg(long)]
    backend: Option<String>,
    /// Mock script JSONL (default: the bundled script for the task)
    #[arg(long, value_name = "FILE")]
    script: Option<PathBuf>,
    /// Chat-completions URL for the http backend
    #[arg(long)]
    endpoint: Option<String>,
    /// Model id (default: mock-model with the mock backend)
    #[arg(long)]
    model: Option<String>,
    /// Sampling temperature (default: 0.1 for cotda, 0 otherwise)
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
    /// Parallel requests
    #[arg(long)]
    workers: Option<usize>,
    /// Requests per minute for the http backend
    #[arg(long)]
    rpm: Option<u32>,
    /// Response cache directory
    #[arg(long, value_name = "DIR")]
    cache: Option<PathBuf>,
    /// Keep seeds in the training set (true/false, default true)
    #[arg(long)]
    include_seeds: Option<bool>,
    /// Test set copied into the run for later evaluation
    #[arg(long, value_name = "FILE")]
    test: Option<PathBuf>,
    /// Root directory for run directories (default: runs)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ProviderArgs {
    /// stub, stub:<dim>, file:<path> or service:<url>
    #[arg(long)]
    provider: Option<String>,
    /// Embedding file used as a cache in front of the provider
    #[arg(long, value_name = "FILE")]
    embeddings: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    /// Run manifest whose seeds, training members and test set are embedded
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Run manifest (pool, generations and test set come from the run)
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// nc or knn
    #[arg(long)]
    algo: Option<String>,
    /// Neighbours for knn (default 5)
    #[arg(long)]
    k: Option<usize>,
    /// Number of runs (default 10)
    #[arg(long)]
    runs: Option<usize>,
    /// Seeds per label per run (default: the run's k, else 10)
    #[arg(long)]
    shots: Option<usize>,
    /// Sampling mode per run (default: the run's mode)
    #[arg(long)]
    mode: Option<String>,
    /// Run i samples with seed + i (default 0)
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    one_way_label: Option<String>,
    /// seeds, augmented or generated
    #[arg(long)]
    train: Option<String>,
    /// Test set JSONL (default: the run's test set or the bundled one)
    #[arg(long, value_name = "FILE")]
    test: Option<PathBuf>,
    #[command(flatten)]
    provider: ProviderArgs,
    /// Write the JSONL report here instead of stdout
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PcaArgs {
    /// Run manifest
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    provider: ProviderArgs,
    /// Use at most this many seeds (with their generations)
    #[arg(long)]
    limit: Option<usize>,
    /// Write CSV here instead of stdout
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Also write an SVG scatter
    #[arg(long, value_name = "FILE")]
    svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Manifests, JSONL evaluation reports, or directories holding them
    #[arg(required = true)]
    paths: Vec<PathBuf>,
}

struct Ctx {
    cfg: RunConfig,
    registry: TaskRegistry,
}

impl Ctx {
    fn spec(&self) -> Result<TaskSpec, CliError> {
        let task = self.cfg.raw("task").ok_or_else(|| CliError::usage("--task is required"))?;
        Ok(self.registry.get(task)?.clone())
    }

    fn pool(&self, spec: &TaskSpec) -> Result<Vec<SeedExample>, CliError> {
        match self.cfg.raw("data") {
            Some(p) => Ok(load_dataset(p, spec)?),
            None => toy::pool(spec).map_err(|_| {
                CliError::usage(format!("no bundled data for task {}; pass --data", spec.task_id))
            }),
        }
    }

    fn test_set(&self, spec: &TaskSpec) -> Result<Option<Vec<SeedExample>>, CliError> {
        match self.cfg.raw("test") {
            Some(p) => Ok(Some(load_dataset(p, spec)?)),
            None if self.cfg.raw("data").is_none() => Ok(toy::test_set(spec).ok()),
            None => Ok(None),
        }
    }

    fn sample_request(&self, default_k: usize) -> Result<SampleRequest, CliError> {
        Ok(SampleRequest {
            mode: self.cfg.get_or("mode", SamplingMode::NWayKShot)?,
            k: self.cfg.get_or("k", default_k)?,
            rng_seed: self.cfg.get_or("seed", 0u64)?,
            one_way_label: self.cfg.raw("one_way_label").map(str::to_string),
        })
    }

    fn provider(&self) -> Result<Box<dyn EmbeddingProvider>, CliError> {
        let base = provider_from_spec(self.cfg.raw("provider").unwrap_or("stub"))?;
        Ok(match self.cfg.raw("embeddings") {
            Some(path) => Box::new(CachedProvider::open(base, path)?),
            None => base,
        })
    }
}

fn set_data(cfg: &mut RunConfig, d: &DataArgs) {
    cfg.set_opt("task", d.task.as_ref());
    cfg.set_opt("data", d.data.as_ref().map(|p| p.display()));
}

fn set_sampling(cfg: &mut RunConfig, s: &SamplingArgs) {
    cfg.set_opt("k", s.k);
    cfg.set_opt("mode", s.mode.as_ref());
    cfg.set_opt("seed", s.seed);
    cfg.set_opt("one_way_label", s.one_way_label.as_ref());
}

fn set_provider(cfg: &mut RunConfig, p: &ProviderArgs) {
    cfg.set_opt("provider", p.provider.as_ref());
    cfg.set_opt("embeddings", p.embeddings.as_ref().map(|p| p.display()));
}

/// Unix seconds from `SOURCE_DATE_EPOCH`, else the clock.
fn created_at() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()))
}

fn write_output(path: Option<&Path>, body: &str, out: &mut dyn Write) -> Result<(), CliError> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            }
            std::fs::write(p, body).map_err(|e| io_err(p, e))
        }
        None => out.write_all(body.as_bytes()).map_err(|e| CliError::data(e.to_string())),
    }
}

fn ingest(ctx: &Ctx, args: &IngestArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let spec = ctx.spec()?;
    let path = ctx.cfg.raw("data").ok_or_else(|| CliError::usage("--data is required"))?;
    let mut data = load_dataset(path, &spec)?;
    let _ = writeln!(out, "{path}: {} records for {}", data.len(), spec.task_id);
    if let Some(size) = ctx.cfg.get::<usize>("pool_size")? {
        let balanced = ctx.cfg.get_or("balanced", true)?;
        data = crate::corpus::select_pool(&data, &spec, size, balanced, ctx.cfg.get_or("seed", 0u64)?)?;
        let _ = writeln!(out, "pool of {} ({})", data.len(), if balanced { "balanced" } else { "unbalanced" });
    }
    for label in &spec.labels {
        let _ = writeln!(out, "  {label}: {}", data.iter().filter(|e| &e.label == label).count());
    }
    if let Some(dest) = &args.out {
        crate::corpus::write_dataset(dest, &spec, &data)?;
    }
    Ok(EXIT_OK)
}

fn sample(ctx: &Ctx, args: &SampleArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let spec = ctx.spec()?;
    let pool = ctx.pool(&spec)?;
    let seeds = sample_seed_set_with(&pool, &spec, &ctx.sample_request(10)?)?;
    let mut body = serde_json::to_string_pretty(&seeds).expect("seed set serializes");
    body.push('\n');
    write_output(args.out.as_deref(), &body, out)?;
    Ok(EXIT_OK)
}

fn full_pool_k(pool: &[SeedExample], spec: &TaskSpec) -> usize {
    spec.labels
        .iter()
        .map(|l| pool.iter().filter(|e| &e.label == l && e.origin == Origin::Human).count())
        .min()
        .unwrap_or(0)
}

fn build_gateway(ctx: &Ctx, spec: &TaskSpec) -> Result<(Gateway, String), CliError> {
    let backend = ctx.cfg.raw("backend").unwrap_or("mock");
    let gateway = match backend {
        "mock" => {
            let script = match ctx.cfg.raw("script") {
                Some(p) => MockScript::load(p).map_err(|e| CliError::usage(format!("{p}: {e}")))?,
                None => {
                    let bundled = match spec.task_id.as_str() {
                        "sst2" => SST2_MOCK,
                        "agnews" => AGNEWS_MOCK,
                        other => return Err(CliError::usage(format!("no bundled mock script for {other}; pass --script"))),
                    };
                    MockScript::parse(bundled).map_err(|e| CliError::data(e.to_string()))?
                }
            };
            Gateway::mock(script)
        }
        "http" => {
            let endpoint = ctx
                .cfg
                .raw("endpoint")
                .ok_or_else(|| CliError::usage("--endpoint is required with --backend http"))?;
            if ctx.cfg.raw("model").is_none() {
                return Err(CliError::usage("--model is required with --backend http"));
            }
            Gateway::new(Box::new(HttpBackend::from_env(endpoint))).with_rate_limit(ctx.cfg.get_or("rpm", 60u32)?)
        }
        other => return Err(CliError::usage(format!("unknown backend `{other}` (expected mock or http)"))),
    };
    let gateway = match ctx.cfg.raw("cache") {
        Some(dir) => gateway.with_cache(ResponseCache::open(dir).map_err(|e| io_err(Path::new(dir), e))?),
        None => gateway,
    };
    Ok((gateway, backend.to_string()))
}

fn generate(ctx: &Ctx, args: &GenerateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let spec = ctx.spec()?;
    let pool = ctx.pool(&spec)?;
    let variant: Variant = ctx.cfg.get_or("variant", Variant::Cotam)?;
    if variant == Variant::SeedProposal {
        return Err(CliError::usage("seed_proposal is not a generation variant"));
    }
    let default_k = if args.all { full_pool_k(&pool, &spec) } else { 10 };
    let mut req = ctx.sample_request(default_k)?;
    if args.all {
        req.k = default_k;
    }
    let seeds: SeedSet = sample_seed_set_with(&pool, &spec, &req)?;

    let mut params = CompletionParams::for_variant(ctx.cfg.raw("model").unwrap_or(MOCK_MODEL), variant);
    if let Some(t) = ctx.cfg.get::<f64>("temperature")? {
        params.temperature = t;
    }
    if let Some(m) = ctx.cfg.get::<u32>("max_tokens")? {
        params.max_tokens = m;
    }
    params.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let (gateway, backend_id) = build_gateway(ctx, &spec)?;
    let opts = RunOptions {
        workers: ctx.cfg.get_or("workers", 4usize)?,
        retry_failed: true,
    };
    let include_seeds = ctx.cfg.get_or("include_seeds", true)?;
    let run = run_generation(&seeds, variant, &spec, &params, &gateway, &opts)?;
    let training = assemble_training_set(&run, &seeds.members, &spec, include_seeds);
    let test = ctx.test_set(&spec)?;
    let artifacts = RunArtifacts {
        spec: &spec,
        seeds: &seeds,
        run: &run,
        training: &training,
        include_seeds,
        test: test.as_deref(),
    };
    let rctx = RunContext {
        created_at: created_at(),
        config_digest: ctx.cfg.digest(),
        backend_id,
        retry: gateway.retry_policy().clone(),
        gateway: gateway.stats(),
    };
    let root = PathBuf::from(ctx.cfg.raw("out").unwrap_or("runs"));
    let (manifest_path, outcome) = persist_run(&root, &artifacts, &rctx)?;
    let b = training.budget;
    let _ = writeln!(out, "run {}", run.run_id);
    let _ = writeln!(out, "manifest {}", manifest_path.display());
    let _ = writeln!(
        out,
        "seeds {} attempted {} realized {} dropped {} members {} ({:?})",
        b.seeds,
        b.attempted,
        b.realized,
        b.dropped(),
        training.len(),
        outcome
    );
    if run.has_backend_failures() {
        eprintln!("partial run: some generations failed at the backend; rerun with --cache to resume");
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

fn manifest_path(ctx: &Ctx) -> Option<PathBuf> {
    ctx.cfg.raw("manifest").map(|p| {
        let p = PathBuf::from(p);
        if p.is_dir() {
            p.join(crate::store::MANIFEST_FILE)
        } else {
            p
        }
    })
}

fn embed(ctx: &Ctx, out: &mut dyn Write) -> Result<i32, CliError> {
    let (spec, examples): (TaskSpec, Vec<SeedExample>) = match manifest_path(ctx) {
        Some(m) => {
            let stored = load_run(&m)?;
            let mut ex = stored.seeds.members.clone();
            ex.extend(stored.training.members.iter().map(|m| m.example.clone()));
            ex.extend(stored.test.clone().unwrap_or_default());
            (stored.manifest.task, ex)
        }
        None => {
            let spec = ctx.spec()?;
            let mut ex = ctx.pool(&spec)?;
            ex.extend(ctx.test_set(&spec)?.unwrap_or_default());
            (spec, ex)
        }
    };
    let path = ctx
        .cfg
        .raw("embeddings")
        .ok_or_else(|| CliError::usage("--embeddings <FILE> is required"))?;
    let provider = CachedProvider::open(provider_from_spec(ctx.cfg.raw("provider").unwrap_or("stub"))?, path)?;
    let before = provider.len();
    let mut texts: Vec<String> = examples.iter().map(|e| embedding_text(&spec, e)).collect();
    texts.sort();
    texts.dedup();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let vectors = provider.embed_batch(&refs)?;
    let dim = vectors.first().map_or(0, |v| v.dim());
    let _ = writeln!(
        out,
        "{path}: {} texts ({} new), dim {dim}, provider {}",
        texts.len(),
        provider.len() - before,
        provider.id()
    );
    Ok(EXIT_OK)
}

fn parse_algo(ctx: &Ctx) -> Result<Algorithm, CliError> {
    match ctx.cfg.raw("algo").unwrap_or("nc") {
        "nc" => Ok(Algorithm::Nc),
        "knn" => Ok(Algorithm::Knn {
            k: ctx.cfg.get_or("knn_k", 5usize)?,
        }),
        other => Err(CliError::usage(format!("unknown algorithm `{other}` (expected nc or knn)"))),
    }
}

fn parse_train(v: &str) -> Result<TrainSource, CliError> {
    match v {
        "seeds" => Ok(TrainSource::Seeds),
        "augmented" => Ok(TrainSource::Augmented),
        "generated" => Ok(TrainSource::GeneratedOnly),
        other => Err(CliError::usage(format!("unknown training source `{other}` (expected seeds, augmented or generated)"))),
    }
}

fn eval(ctx: &Ctx, args: &EvalArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let stored: Option<StoredRun> = manifest_path(ctx).map(|m| load_run(&m)).transpose()?;
    let (spec, pool, test) = match &stored {
        Some(s) => {
            let spec = s.manifest.task.clone();
            let test = match ctx.cfg.raw("test") {
                Some(p) => Some(load_dataset(p, &spec)?),
                None => s.test.clone(),
            };
            (spec, s.seeds.members.clone(), test)
        }
        None => {
            let spec = ctx.spec()?;
            let pool = ctx.pool(&spec)?;
            let test = ctx.test_set(&spec)?;
            (spec, pool, test)
        }
    };
    let test = test.ok_or_else(|| CliError::usage("no test set: pass --test"))?;
    let train = match (ctx.cfg.raw("train"), &stored) {
        (Some(t), _) => parse_train(t)?,
        (None, Some(_)) => TrainSource::Augmented,
        (None, None) => TrainSource::Seeds,
    };
    if train != TrainSource::Seeds && stored.is_none() {
        return Err(CliError::usage("training on generations needs --manifest"));
    }
    let protocol = Protocol {
        runs: ctx.cfg.get_or("runs", 10usize)?,
        base_seed: ctx.cfg.get_or("seed", 0u64)?,
        mode: ctx
            .cfg
            .get_or("mode", stored.as_ref().map_or(SamplingMode::NWayKShot, |s| s.manifest.sampling.mode))?,
        shots: ctx.cfg.get_or("shots", stored.as_ref().map_or(10, |s| s.manifest.sampling.k))?,
        one_way_label: ctx
            .cfg
            .raw("one_way_label")
            .map(str::to_string)
            .or_else(|| stored.as_ref().and_then(|s| s.manifest.sampling.one_way_label.clone())),
        algorithm: parse_algo(ctx)?,
        train_source: train,
    };
    if protocol.runs == 0 {
        return Err(CliError::usage("--runs must be positive"));
    }
    let provider = ctx.provider()?;
    let report = multi_run(&spec, &pool, stored.as_ref().map(|s| &s.run), &test, provider.as_ref(), &protocol)?;
    write_output(args.out.as_deref(), &report.to_jsonl(), out)?;
    if args.out.is_some() {
        let _ = writeln!(
            out,
            "{} {} {}: {} over {} runs",
            report.task_id,
            report.method,
            report.algorithm,
            match (report.mean, report.std) {
                (Some(m), Some(s)) => format!("{:.4} ± {:.4}", m, s),
                _ => "no successful runs".to_string(),
            },
            report.run_count
        );
    }
    if report.partial {
        eprintln!("partial evaluation: runs {:?} failed", report.failed_runs);
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

fn pca(ctx: &Ctx, args: &PcaArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let m = manifest_path(ctx).ok_or_else(|| CliError::usage("--manifest is required"))?;
    let stored = load_run(&m)?;
    let spec = &stored.manifest.task;
    let limit = args.limit.unwrap_or(usize::MAX);
    let mut chosen: Vec<(&SeedExample, Vec<&SeedExample>)> = Vec::new();
    for seed in &stored.seeds.members {
        let generated: Vec<&SeedExample> = stored
            .training
            .members
            .iter()
            .filter(|t| t.provenance == Provenance::Generated && t.seed_id == seed.id)
            .map(|t| &t.example)
            .collect();
        if !generated.is_empty() && chosen.len() < limit {
            chosen.push((seed, generated));
        }
    }
    let mut texts: Vec<String> = Vec::new();
    let mut meta: Vec<(String, String, Role)> = Vec::new();
    for (seed, gens) in &chosen {
        texts.push(embedding_text(spec, seed));
        meta.push((seed.label.clone(), seed.id.clone(), Role::Seed));
        for g in gens {
            texts.push(embedding_text(spec, g));
            meta.push((g.label.clone(), seed.id.clone(), Role::Generated));
        }
    }
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let vectors = ctx.provider()?.embed_batch(&refs)?;
    let points: Vec<AnnotatedPoint> = vectors
        .into_iter()
        .zip(meta)
        .map(|(v, (label, pair_id, role))| AnnotatedPoint {
            vector: v.values,
            label,
            pair_id,
            role,
        })
        .collect();
    let plot = pair_plot(&points)?;
    write_output(args.out.as_deref(), &plot.to_csv(), out)?;
    if let Some(svg) = &args.svg {
        write_output(Some(svg), &plot.to_svg(&spec.labels), out)?;
    }
    let r = &plot.projection.explained_ratio;
    eprintln!(
        "{} points from {} pairs; explained variance {:.4}, {:.4}",
        plot.rows.len(),
        chosen.len(),
        r[0],
        r[1]
    );
    Ok(EXIT_OK)
}

fn collect_report_inputs(paths: &[PathBuf]) -> Result<(Vec<PathBuf>, Vec<PathBuf>), CliError> {
    let mut manifests = Vec::new();
    let mut reports = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| io_err(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .collect();
            entries.sort();
            for e in entries {
                if e.is_dir() && e.join(crate::store::MANIFEST_FILE).is_file() {
                    manifests.push(e.join(crate::store::MANIFEST_FILE));
                } else if e.extension().is_some_and(|x| x == "jsonl") {
                    reports.push(e);
                } else if e.file_name().is_some_and(|n| n == crate::store::MANIFEST_FILE) {
                    manifests.push(e);
                }
            }
        } else if p.extension().is_some_and(|x| x == "json") {
            manifests.push(p.clone());
        } else if p.exists() {
            reports.push(p.clone());
        } else {
            return Err(CliError::data(format!("{}: no such file", p.display())));
        }
    }
    Ok((manifests, reports))
}

fn report(args: &ReportArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let (manifest_paths, report_paths) = collect_report_inputs(&args.paths)?;
    if manifest_paths.is_empty() && report_paths.is_empty() {
        return Err(CliError::usage("no manifests or reports found"));
    }
    let manifests = manifest_paths.iter().map(|p| load_manifest(p)).collect::<Result<Vec<_>, _>>()?;
    let mut reports = Vec::new();
    for p in &report_paths {
        let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
        let r = EvalReport::from_jsonl(&text).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
        if !r.is_consistent() {
            return Err(CliError::data(format!("{}: summary does not match per-run results", p.display())));
        }
        reports.push(r);
    }
    if !manifests.is_empty() {
        let _ = writeln!(out, "{}", manifest_table(&manifests));
    }
    if !reports.is_empty() {
        let _ = write!(out, "{}", comparison_table(&reports));
    }
    Ok(EXIT_OK)
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.set_opt("tasks", cli.tasks.as_ref().map(|p| p.display()));
    match &cli.command {
        Command::Ingest(a) => {
            set_data(&mut cfg, &a.data);
            cfg.set_opt("pool_size", a.pool_size);
            cfg.set_opt("balanced", a.balanced);
            cfg.set_opt("seed", a.seed);
        }
        Command::Sample(a) => {
            set_data(&mut cfg, &a.data);
            set_sampling(&mut cfg, &a.sampling);
        }
        Command::Generate(a) => {
            set_data(&mut cfg, &a.data);
            set_sampling(&mut cfg, &a.sampling);
            cfg.set_opt("variant", a.variant.as_ref());
            cfg.set_opt("backend", a.backend.as_ref());
            cfg.set_opt("script", a.script.as_ref().map(|p| p.display()));
            cfg.set_opt("endpoint", a.endpoint.as_ref());
            cfg.set_opt("model", a.model.as_ref());
            cfg.set_opt("temperature", a.temperature);
            cfg.set_opt("max_tokens", a.max_tokens);
            cfg.set_opt("workers", a.workers);
            cfg.set_opt("rpm", a.rpm);
            cfg.set_opt("cache", a.cache.as_ref().map(|p| p.display()));
            cfg.set_opt("include_seeds", a.include_seeds);
            cfg.set_opt("test", a.test.as_ref().map(|p| p.display()));
            cfg.set_opt("out", a.out.as_ref().map(|p| p.display()));
        }
        Command::Embed(a) => {
            set_data(&mut cfg, &a.data);
            set_provider(&mut cfg, &a.provider);
            cfg.set_opt("manifest", a.manifest.as_ref().map(|p| p.display()));
        }
        Command::Eval(a) => {
            set_data(&mut cfg, &a.data);
            set_provider(&mut cfg, &a.provider);
            cfg.set_opt("manifest", a.manifest.as_ref().map(|p| p.display()));
            cfg.set_opt("algo", a.algo.as_ref());
            cfg.set_opt("knn_k", a.k);
            cfg.set_opt("runs", a.runs);
            cfg.set_opt("shots", a.shots);
            cfg.set_opt("mode", a.mode.as_ref());
            cfg.set_opt("seed", a.seed);
            cfg.set_opt("one_way_label", a.one_way_label.as_ref());
            cfg.set_opt("train", a.train.as_ref());
            cfg.set_opt("test", a.test.as_ref().map(|p| p.display()));
        }
        Command::Pca(a) => {
            set_provider(&mut cfg, &a.provider);
            cfg.set_opt("manifest", a.manifest.as_ref().map(|p| p.display()));
        }
        Command::Report(_) => {}
    }
    let registry = match cfg.raw("tasks") {
        Some(p) => TaskRegistry::from_path(p).map_err(|e| CliError::usage(e.to_string()))?,
        None => TaskRegistry::bundled(),
    };
    let ctx = Ctx { cfg, registry };
    match &cli.command {
        Command::Ingest(a) => ingest(&ctx, a, out),
        Command::Sample(a) => sample(&ctx, a, out),
        Command::Generate(a) => generate(&ctx, a, out),
        Command::Embed(_) => embed(&ctx, out),
        Command::Eval(a) => eval(&ctx, a, out),
        Command::Pca(a) => pca(&ctx, a, out),
        Command::Report(a) => report(a, out),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns its exit code. Diagnostics go to stderr as a single line.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return EXIT_OK;
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("usage error");
            eprintln!("{first} (see --help)");
            return EXIT_USAGE;
        }
    };
    match dispatch(cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message.replace('\n', " "));
            e.code
        }
    }
}

pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    run(std::env::args_os(), &mut lock)
}
