#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};

use attrmanip::corpus::{SeedExample, SeedSet, TaskRegistry, TaskSpec};
use attrmanip::llm::{CompletionParams, MockScript};
use attrmanip::prompt::{enumerate_targets, render, render_seed_proposal, Variant};
use serde::Deserialize;

pub fn golden_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

#[derive(Deserialize)]
struct GoldenSeed {
    id: String,
    fields: BTreeMap<String, String>,
    #[serde(default)]
    choices: Vec<String>,
    label: String,
}

#[derive(Deserialize)]
struct GoldenCase {
    task: String,
    seed: GoldenSeed,
    target: String,
}

/// Renders every golden case and compares byte for byte. Returns the number
/// of files checked and a description of each mismatch.
pub fn check_goldens() -> (usize, Vec<String>) {
    let registry = TaskRegistry::bundled();
    let cases: Vec<GoldenCase> =
        serde_json::from_str(&std::fs::read_to_string(golden_dir().join("cases.json")).unwrap()).unwrap();
    let mut checked = 0;
    let mut bad = Vec::new();
    for case in &cases {
        let spec = registry.get(&case.task).unwrap();
        let mut seed = SeedExample::single(&case.seed.id, "", &case.seed.label);
        seed.fields = case.seed.fields.clone();
        seed.choices = case.seed.choices.clone();
        for variant in Variant::ALL.into_iter().filter(|v| *v != Variant::SeedProposal) {
            let target = variant.is_switching().then_some(case.target.as_str());
            let rendered = render(variant, &seed, spec, target).unwrap().text;
            let path = golden_dir().join(format!("{}__{}.txt", case.task, variant));
            let expected = std::fs::read_to_string(&path).unwrap();
            checked += 1;
            if rendered != expected {
                bad.push(format!("{}:\n--- expected\n{expected}\n--- rendered\n{rendered}", path.display()));
            }
        }
    }
    let sst2 = registry.get("sst2").unwrap();
    for (label, count) in [("positive", 10), ("negative", 1)] {
        let rendered = render_seed_proposal(sst2, label, count).unwrap().text;
        let path = golden_dir().join(format!("sst2__seed_proposal__{label}_{count}.txt"));
        checked += 1;
        if rendered != std::fs::read_to_string(&path).unwrap() {
            bad.push(format!("{} mismatch", path.display()));
        }
    }
    (checked, bad)
}

/// A rewrite that differs from the seed and mentions the target.
pub fn clean_answer(seed: &SeedExample, target: &str, replicate: u32) -> String {
    format!(
        "1. Attributes: subject, length, register.\n2. Keep them and change the label.\n3. \"A fresh sentence about {} for {target}, take {replicate}.\"",
        seed.id
    )
}

/// Scripts a clean answer for every prompt the run will send.
pub fn script_run(seeds: &SeedSet, variant: Variant, spec: &TaskSpec, params: &CompletionParams) -> MockScript {
    let mut script = MockScript::new();
    for seed in &seeds.members {
        if variant.is_switching() {
            for t in enumerate_targets(spec, &seed.label).unwrap() {
                let p = render(variant, seed, spec, Some(&t)).unwrap();
                script.push_for(&p.text, params, 0, clean_answer(seed, &t, 0), None);
            }
        } else {
            let p = render(variant, seed, spec, None).unwrap();
            for r in 0..spec.n_labels() as u32 - 1 {
                script.push_for(&p.text, params, r, clean_answer(seed, &seed.label, r), None);
            }
        }
    }
    script
}

#[derive(Debug, Clone)]
pub struct CapturedRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl CapturedRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

pub struct FakeServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<CapturedRequest>>>,
}

/// Serves canned `(status, body)` responses in order on a local port, one
/// per connection, recording each request. The last response repeats.
pub fn fake_server(responses: Vec<(u16, String)>) -> FakeServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = requests.clone();
    std::thread::spawn(move || {
        for (i, stream) in listener.incoming().enumerate() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            if reader.read_line(&mut line).unwrap_or(0) == 0 {
                continue;
            }
            let mut parts = line.split_whitespace();
            let method = parts.next().unwrap_or_default().to_string();
            let path = parts.next().unwrap_or_default().to_string();
            let mut headers = Vec::new();
            let mut len = 0usize;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                if let Some((k, v)) = h.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap();
                    }
                    headers.push((k.trim().to_string(), v.trim().to_string()));
                }
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(CapturedRequest {
                method,
                path,
                headers,
                body: String::from_utf8(body).unwrap(),
            });
            let (status, text) = responses[i.min(responses.len() - 1)].clone();
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    FakeServer {
        url: format!("http://{addr}"),
        requests,
    }
}

/// Cyclic Jacobi eigensolver for a symmetric matrix. Returns eigenvalues in
/// descending order with unit eigenvectors as columns of the second value.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| m[b][b].total_cmp(&m[a][a]));
    let vals = order.iter().map(|&i| m[i][i]).collect();
    let vecs = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (vals, vecs)
}

/// Sample covariance (n − 1 denominator) of row vectors.
pub fn covariance(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len() as f64;
    let d = points[0].len();
    let mean: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n).collect();
    (0..d)
        .map(|a| {
            (0..d)
                .map(|b| points.iter().map(|p| (p[a] - mean[a]) * (p[b] - mean[b])).sum::<f64>() / (n - 1.0))
                .collect()
        })
        .collect()
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (ua, ub) = (unit(a), unit(b));
    ua.iter().zip(&ub).map(|(x, y)| x * y).sum()
}

/// Isotropic Gaussian clusters around random unit directions.
pub struct Clusters {
    pub labels: Vec<String>,
    pub directions: Vec<Vec<f64>>,
    pub train: Vec<(String, Vec<f64>)>,
    pub queries: Vec<(String, Vec<f64>)>,
}

pub fn gaussian_clusters(seed: u64, classes: usize, dim: usize, per_class: usize, queries: usize, spread: f64) -> Clusters {
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<String> = (0..classes).map(|i| format!("c{i}")).collect();
    let directions: Vec<Vec<f64>> = (0..classes)
        .map(|_| unit(&(0..dim).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>()))
        .collect();
    let draw = |c: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        directions[c]
            .iter()
            .map(|x| x + spread * { let z: f64 = StandardNormal.sample(&mut *rng); z })
            .collect()
    };
    let mut train = Vec::new();
    for c in 0..classes {
        for _ in 0..per_class {
            train.push((labels[c].clone(), draw(c, &mut rng)));
        }
    }
    let mut qs = Vec::new();
    for _ in 0..queries {
        let c = rng.random_range(0..classes);
        qs.push((labels[c].clone(), draw(c, &mut rng)));
    }
    Clusters {
        labels,
        directions,
        train,
        queries: qs,
    }
}

/// Brute-force nearest centroid: centroids recomputed here, argmax by a
/// strict scan in label order.
pub fn oracle_nc(labels: &[String], train: &[(String, Vec<f64>)], q: &[f64]) -> String {
    let mut best: Option<(usize, f64)> = None;
    for (li, l) in labels.iter().enumerate() {
        let members: Vec<Vec<f64>> = train.iter().filter(|(x, _)| x == l).map(|(_, v)| unit(v)).collect();
        let d = members[0].len();
        let mean: Vec<f64> = (0..d).map(|j| members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64).collect();
        let s = cosine(&mean, q);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((li, s));
        }
    }
    labels[best.unwrap().0].clone()
}

/// Brute-force KNN: repeatedly takes the most similar unused training point
/// (earliest on ties), then votes by count, summed similarity, label order.
pub fn oracle_knn(labels: &[String], train: &[(String, Vec<f64>)], q: &[f64], k: usize) -> String {
    let sims: Vec<f64> = train.iter().map(|(_, v)| cosine(v, q)).collect();
    let mut used = vec![false; train.len()];
    let mut count = vec![0usize; labels.len()];
    let mut total = vec![0.0f64; labels.len()];
    for _ in 0..k {
        let mut pick: Option<usize> = None;
        for i in 0..train.len() {
            if !used[i] && pick.is_none_or(|p| sims[i] > sims[p]) {
                pick = Some(i);
            }
        }
        let i = pick.unwrap();
        used[i] = true;
        let li = labels.iter().position(|l| *l == train[i].0).unwrap();
        count[li] += 1;
        total[li] += sims[i];
    }
    let mut best = 0;
    for li in 1..labels.len() {
        if count[li] > count[best] || (count[li] == count[best] && total[li] > total[best]) {
            best = li;
        }
    }
    labels[best].clone()
}
