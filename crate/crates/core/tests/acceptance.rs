mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use attrmanip::corpus::{sample_seed_set, toy, SamplingMode, TaskRegistry, TaskSpec};
use attrmanip::embed::{EmbeddingProvider, ServiceProvider};
use attrmanip::eval::{fit_centroids, pca_project, KnnModel, LabeledSet};
use attrmanip::llm::{CompletionParams, Gateway, HttpBackend, MockScript};
use attrmanip::parse::{extract_final_sentence, extract_with, load_fixtures, ExtractOptions, Verdict};
use attrmanip::pipeline::{assemble_training_set, run_generation, RunOptions};
use attrmanip::prompt::{enumerate_targets, render, Variant};
use attrmanip::store::{load_run, persist_run, RunArtifacts, RunContext};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn spec(task: &str) -> TaskSpec {
    TaskRegistry::bundled().get(task).unwrap().clone()
}

fn toy_file(name: &str) -> String {
    format!("{}/data/toy/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn cli(args: &[&str]) -> Result<String, String> {
    let mut out = Vec::new();
    let code = attrmanip::cli::run(std::iter::once("attrmanip").chain(args.iter().copied()), &mut out);
    let text = String::from_utf8_lossy(&out).into_owned();
    check(code == 0, format!("`{}` exited {code}: {text}", args.join(" ")))?;
    Ok(text)
}

fn manifest_from(stdout: &str) -> Result<PathBuf, String> {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix("manifest "))
        .map(PathBuf::from)
        .ok_or_else(|| format!("no manifest line in {stdout:?}"))
}

fn run_files(manifest: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let dir = manifest.parent().unwrap();
    let mut out = Vec::new();
    for name in ["manifest.json", "records.jsonl", "training.jsonl", "seedset.json"] {
        let bytes = std::fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"))?;
        out.push((name.to_string(), bytes));
    }
    Ok(out)
}

fn one_pipeline(task: &str) -> Result<Vec<(String, Vec<u8>)>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    std::env::set_current_dir(dir.path()).map_err(|e| e.to_string())?;
    cli(&["ingest", "--task", task, "--data", &toy_file(&format!("{task}.jsonl")), "--out", "pool.jsonl"])?;
    cli(&["sample", "--task", task, "--data", "pool.jsonl", "--k", "3", "--seed", "7", "--out", "seeds.json"])?;
    let stdout = cli(&["generate", "--task", task, "--data", "pool.jsonl", "--all", "--seed", "7", "--out", "runs"])?;
    let manifest = manifest_from(&stdout)?;
    let stored = load_run(&manifest).map_err(|e| e.to_string())?;
    check(stored.manifest.counts.realized > 0, "no realized generations")?;
    check(!stored.manifest.partial, "mock run is partial")?;
    run_files(&manifest)
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let cwd = std::env::current_dir().map_err(|e| e.to_string())?;
    std::env::set_var("SOURCE_DATE_EPOCH", "1700000000");
    let mut compared = 0;
    let result = (|| {
        for task in ["sst2", "agnews"] {
            let a = one_pipeline(task)?;
            let b = one_pipeline(task)?;
            for ((name, x), (_, y)) in a.iter().zip(&b) {
                check(x == y, format!("{task}/{name} differs between runs"))?;
                compared += 1;
            }
        }
        Ok::<_, String>(())
    })();
    std::env::remove_var("SOURCE_DATE_EPOCH");
    std::env::set_current_dir(cwd).map_err(|e| e.to_string())?;
    result?;
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"))?;
    Ok(format!("{compared} files byte-identical across two runs per task in {elapsed:.2?}"))
}

fn scripted_run(root: &Path, task: &str, k: usize, parse_failures: usize) -> Result<(usize, usize, usize, usize, PathBuf), String> {
    let s = spec(task);
    let pool = toy::pool(&s).map_err(|e| e.to_string())?;
    let seeds = sample_seed_set(&pool, &s, SamplingMode::NWayKShot, k, 11).map_err(|e| e.to_string())?;
    let params = CompletionParams::for_variant("mock-model", Variant::Cotam);
    let mut script = MockScript::new();
    let mut failed = 0;
    for seed in &seeds.members {
        for t in enumerate_targets(&s, &seed.label).map_err(|e| e.to_string())? {
            let p = render(Variant::Cotam, seed, &s, Some(&t)).map_err(|e| e.to_string())?;
            let response = if failed < parse_failures {
                failed += 1;
                "3. Write such a sentence without any other explanation.".to_string()
            } else {
                common::clean_answer(seed, &t, 0)
            };
            script.push_for(&p.text, &params, 0, response, None);
        }
    }
    let gateway = Gateway::mock(script);
    let run = run_generation(&seeds, Variant::Cotam, &s, &params, &gateway, &RunOptions::default()).map_err(|e| e.to_string())?;
    let training = assemble_training_set(&run, &seeds.members, &s, true);
    let artifacts = RunArtifacts {
        spec: &s,
        seeds: &seeds,
        run: &run,
        training: &training,
        include_seeds: true,
        test: None,
    };
    let ctx = RunContext {
        created_at: 1_700_000_000,
        config_digest: "acceptance".into(),
        backend_id: "mock".into(),
        retry: gateway.retry_policy().clone(),
        gateway: gateway.stats(),
    };
    let (manifest, _) = persist_run(root, &artifacts, &ctx).map_err(|e| e.to_string())?;
    let b = training.budget;
    Ok((training.len(), b.attempted, b.realized, b.seeds, manifest))
}

fn budget() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let (members, attempted, realized, seeds, _) = scripted_run(&root.join("a"), "agnews", 10, 0)?;
    check(
        (members, seeds, attempted, realized) == (160, 40, 120, 120),
        format!("agnews N=4 K=10: members {members} seeds {seeds} attempted {attempted} realized {realized}"),
    )?;
    let (members, attempted, realized, seeds, _) = scripted_run(&root.join("b"), "sst2", 10, 0)?;
    check(
        (members, seeds, attempted, realized) == (40, 20, 20, 20),
        format!("sst2 N=2 K=10: members {members} seeds {seeds} attempted {attempted} realized {realized}"),
    )?;
    let (members, attempted, realized, _, manifest) = scripted_run(&root.join("c"), "sst2", 10, 2)?;
    check(realized == attempted - 2 && members == 38, format!("with 2 failures: attempted {attempted} realized {realized} members {members}"))?;
    let stored = load_run(&manifest).map_err(|e| e.to_string())?;
    let c = &stored.manifest.counts;
    check(
        (c.attempted, c.realized, c.dropped) == (attempted, realized, 2),
        format!("manifest counts {c:?}"),
    )?;
    Ok("160 (N=4,K=10), 40 (N=2,K=10), realized = attempted - 2 in budget and manifest".into())
}

fn prompt_fidelity() -> Outcome {
    let (checked, bad) = common::check_goldens();
    check(bad.is_empty(), bad.join("; "))?;
    let steps = [
        "What are some other attributes",
        "How to write a similar sentence",
        "Write such a sentence without any other explanation.",
    ];
    let registry = TaskRegistry::bundled();
    for s in registry.specs() {
        let path = common::golden_dir().join(format!("{}__cotam.txt", s.task_id));
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        for step in steps {
            check(text.contains(step), format!("{} cotam prompt lacks {step:?}", s.task_id))?;
        }
    }
    Ok(format!("{checked} golden prompts byte-identical; step strings present for {} tasks", registry.specs().len()))
}

fn labeled(labels: &[String], items: &[(String, Vec<f64>)]) -> LabeledSet {
    LabeledSet::new(labels, items.iter().map(|(l, v)| (l.as_str(), v.as_slice()))).unwrap()
}

fn classifier_oracle() -> Outcome {
    let c = common::gaussian_clusters(2024, 3, 8, 20, 200, 0.6);
    let set = labeled(&c.labels, &c.train);
    let nc = fit_centroids(&set).map_err(|e| e.to_string())?;
    let knn = KnnModel::new(set, 5).map_err(|e| e.to_string())?;
    let mut nc_preds = Vec::new();
    let mut knn_preds = Vec::new();
    for (i, (_, q)) in c.queries.iter().enumerate() {
        let a = nc.predict(q).map_err(|e| e.to_string())?.to_string();
        let b = knn.predict(q).map_err(|e| e.to_string())?.to_string();
        check(a == common::oracle_nc(&c.labels, &c.train, q), format!("NC disagrees on query {i}"))?;
        check(b == common::oracle_knn(&c.labels, &c.train, q, 5), format!("KNN disagrees on query {i}"))?;
        nc_preds.push(a);
        knn_preds.push(b);
    }
    for factor in [1e-3, 0.5, 7.25, 1e4] {
        let scaled: Vec<(String, Vec<f64>)> = c.train.iter().map(|(l, v)| (l.clone(), v.iter().map(|x| x * factor).collect())).collect();
        let set = labeled(&c.labels, &scaled);
        let nc = fit_centroids(&set).map_err(|e| e.to_string())?;
        let knn = KnnModel::new(set, 5).map_err(|e| e.to_string())?;
        for (i, (_, q)) in c.queries.iter().enumerate() {
            let qs: Vec<f64> = q.iter().map(|x| x * factor * 3.0).collect();
            check(nc.predict(&qs).unwrap() == nc_preds[i], format!("NC changes under scaling {factor} at {i}"))?;
            check(knn.predict(&qs).unwrap() == knn_preds[i], format!("KNN changes under scaling {factor} at {i}"))?;
        }
    }
    Ok("NC and KNN(k=5) agree with brute force on 200/200 queries; invariant under 4 scalings".into())
}

fn pca_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let sd = [3.0, 1.0, 0.1];
    let pts: Vec<Vec<f64>> = (0..2000)
        .map(|_| {
            sd.iter()
                .map(|s| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    s * z
                })
                .collect()
        })
        .collect();
    let p = pca_project(&pts).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let (c0, c1) = (&p.components[0], &p.components[1]);
    check((dot(c0, c0) - 1.0).abs() < 1e-9 && (dot(c1, c1) - 1.0).abs() < 1e-9, "components not unit")?;
    check(dot(c0, c1).abs() < 1e-9, "components not orthogonal")?;
    check(p.explained_ratio[0] >= p.explained_ratio[1], "ratios not descending")?;
    let expected = 9.0 / 10.01;
    check(
        (p.explained_ratio[0] - expected).abs() < 0.05,
        format!("first ratio {} vs {expected}", p.explained_ratio[0]),
    )?;
    let (_, vecs) = common::jacobi_eigen(&common::covariance(&pts));
    let mut worst = 0.0f64;
    for k in 0..2 {
        let sign = if dot(&p.components[k], &vecs[k]) >= 0.0 { 1.0 } else { -1.0 };
        for (x, xy) in pts.iter().zip(&p.points) {
            let centered: Vec<f64> = x.iter().zip(&p.mean).map(|(a, m)| a - m).collect();
            worst = worst.max((xy[k] - sign * dot(&centered, &vecs[k])).abs());
        }
    }
    check(worst < 1e-6, format!("projection deviates from oracle by {worst:e}"))?;
    check(elapsed < Duration::from_secs(1), format!("took {elapsed:?}"))?;
    Ok(format!(
        "ratio[0] {:.4}, max projection error {worst:.1e}, {elapsed:.2?}",
        p.explained_ratio[0]
    ))
}

fn malformed_inputs() -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let alphabet: Vec<char> = "ab \"'“”\n\r\t1234.:-*#`\\é漢\u{0}\u{200b}".chars().collect();
    let mut inputs: Vec<String> = vec![
        String::new(),
        "\"".into(),
        "\"\"\"".into(),
        "3.".into(),
        "3. \"".into(),
        "1.\n2.\n3.\n".into(),
        "**".into(),
        "\u{feff}".into(),
        "\n\n\n".into(),
        "\"unterminated".repeat(500),
        "x".repeat(100_000),
        "3. “mismatched\"".into(),
        "####\n---\n```".into(),
    ];
    for _ in 0..500 {
        let len = rng.random_range(0..200);
        inputs.push((0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect());
    }
    for _ in 0..100 {
        let bytes: Vec<u8> = (0..rng.random_range(0..120)).map(|_| rng.random()).collect();
        inputs.push(String::from_utf8_lossy(&bytes).into_owned());
    }
    inputs
}

fn parser_suite() -> Outcome {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/responses");
    let fixtures = load_fixtures(dir).map_err(|e| e.to_string())?;
    check(fixtures.len() >= 20, format!("only {} fixtures", fixtures.len()))?;
    let failures: Vec<String> = fixtures.iter().filter_map(|f| f.check().err()).collect();
    check(failures.is_empty(), failures.join("; "))?;
    let echo = fixtures.iter().filter(|f| f.verdict == Some(Verdict::EchoOfSeed)).count();
    let meta = fixtures.iter().filter(|f| f.verdict == Some(Verdict::MetaText)).count();
    check(echo > 0 && meta > 0, format!("echo fixtures {echo}, meta fixtures {meta}"))?;

    let inputs = malformed_inputs();
    let previous = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let mut crashes = 0;
    for raw in &inputs {
        for variant in [Variant::Cotam, Variant::Flipda, Variant::CotamWoCot] {
            let ok = catch_unwind(AssertUnwindSafe(|| {
                let _ = extract_final_sentence(raw, "The movie is great.", variant);
                let opts = ExtractOptions {
                    seed_sentence: raw,
                    final_step: variant.final_step(),
                    attributes: vec!["sentiment: positive", raw.as_str()],
                };
                let _ = extract_with(raw, &opts);
            }));
            crashes += ok.is_err() as usize;
        }
    }
    std::panic::set_hook(previous);
    check(crashes == 0, format!("{crashes} crashes on malformed input"))?;
    Ok(format!(
        "{} fixtures pass ({echo} echo, {meta} meta-text); 0 crashes on {} malformed inputs",
        fixtures.len(),
        inputs.len() * 3
    ))
}

const LIVE_LLM_ENDPOINT: &str = "ATTRMANIP_LLM_ENDPOINT";
const LIVE_LLM_MODEL: &str = "ATTRMANIP_LLM_MODEL";
const LIVE_EMBED_ENDPOINT: &str = "ATTRMANIP_EMBED_ENDPOINT";

fn live_smoke() -> Option<Outcome> {
    let llm = std::env::var(LIVE_LLM_ENDPOINT).ok()?;
    let model = std::env::var(LIVE_LLM_MODEL).ok()?;
    let embed = std::env::var(LIVE_EMBED_ENDPOINT).ok()?;
    Some((|| {
        let s = spec("sst2");
        let pool = toy::pool(&s).map_err(|e| e.to_string())?;
        let seeds = sample_seed_set(&pool, &s, SamplingMode::NWayKShot, 5, 0).map_err(|e| e.to_string())?;
        let params = CompletionParams::for_variant(model, Variant::Cotam);
        let gateway = Gateway::new(Box::new(HttpBackend::from_env(llm))).with_rate_limit(60);
        let run = run_generation(&seeds, Variant::Cotam, &s, &params, &gateway, &RunOptions::default()).map_err(|e| e.to_string())?;
        let ok: Vec<_> = run.records.iter().filter(|r| r.verdict.is_ok()).collect();
        check(!ok.is_empty(), "no ok generations")?;
        let provider = ServiceProvider::new(embed);
        let seed_texts: Vec<&str> = seeds.members.iter().map(|m| m.manipulated_text(&s)).collect();
        let gen_texts: Vec<&str> = ok.iter().map(|r| r.sentence.as_deref().unwrap()).collect();
        let seed_vecs = provider.embed_batch(&seed_texts).map_err(|e| e.to_string())?;
        let gen_vecs = provider.embed_batch(&gen_texts).map_err(|e| e.to_string())?;
        let set = LabeledSet::new(
            &s.labels,
            seeds.members.iter().zip(&seed_vecs).map(|(m, v)| (m.label.as_str(), v.values.as_slice())),
        )
        .map_err(|e| e.to_string())?;
        let nc = fit_centroids(&set).map_err(|e| e.to_string())?;
        let hits = ok
            .iter()
            .zip(&gen_vecs)
            .filter(|(r, v)| nc.predict(&v.values).map(|p| p == r.target_label).unwrap_or(false))
            .count();
        let rate = hits as f64 / ok.len() as f64;
        check(rate >= 0.7, format!("{hits}/{} generations land on the target centroid", ok.len()))?;
        Ok(format!("{hits}/{} generations land on the target centroid ({:.0}%)", ok.len(), rate * 100.0))
    })())
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("determinism", determinism),
        ("budget arithmetic", budget),
        ("prompt fidelity", prompt_fidelity),
        ("classifier oracle equivalence", classifier_oracle),
        ("PCA correctness", pca_correctness),
        ("parser suite", parser_suite),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    match live_smoke() {
        None => println!(
            "SKIP live smoke (non-gating): set {LIVE_LLM_ENDPOINT}, {LIVE_LLM_MODEL} and {LIVE_EMBED_ENDPOINT} to run"
        ),
        Some(Ok(detail)) => println!("PASS live smoke (non-gating): {detail}"),
        Some(Err(detail)) => println!("FAIL live smoke (non-gating): {detail}"),
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
