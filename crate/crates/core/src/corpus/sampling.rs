//! Seed sampling.
//!
//! The generator is ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded through
//! `SeedableRng::seed_from_u64`. Each label bucket (pool members of that label,
//! in file order) is shuffled with a descending Fisher–Yates pass and the
//! prefix is taken. Bounded draws use rejection sampling on `next_u64`, so the
//! stream of draws depends only on the seed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Origin, SeedExample, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// K examples of every label.
    NWayKShot,
    /// K examples of a single label.
    OneWayKShot,
    /// N·K examples of a single label.
    OneWayNkShot,
    /// K examples of every label, drawn from LLM-proposed pool members.
    LlmProposed,
}

impl SamplingMode {
    pub const ALL: [SamplingMode; 4] = [Self::NWayKShot, Self::OneWayKShot, Self::OneWayNkShot, Self::LlmProposed];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::NWayKShot => "n_way_k_shot",
            Self::OneWayKShot => "one_way_k_shot",
            Self::OneWayNkShot => "one_way_nk_shot",
            Self::LlmProposed => "llm_proposed",
        }
    }

    pub fn is_one_way(self) -> bool {
        matches!(self, SamplingMode::OneWayKShot | SamplingMode::OneWayNkShot)
    }
}

impl std::fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Accepts snake or kebab case, e.g. `n_way_k_shot` or `n-way-k-shot`.
impl std::str::FromStr for SamplingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| format!("unknown sampling mode `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    pub task_id: String,
    pub mode: SamplingMode,
    pub k: usize,
    pub rng_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub one_way_label: Option<String>,
    pub members: Vec<SeedExample>,
}

impl SeedSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.members.iter().map(|m| m.id.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRequest {
    pub mode: SamplingMode,
    pub k: usize,
    pub rng_seed: u64,
    /// Label used by the one-way modes; the first registry label if unset.
    pub one_way_label: Option<String>,
}

/// Uniform integer in `0..bound` by rejection sampling.
pub fn uniform_below(rng: &mut impl RngCore, bound: u64) -> u64 {
    assert!(bound > 0, "bound must be positive");
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let v = rng.next_u64();
        if v >= threshold {
            return v % bound;
        }
    }
}

fn fisher_yates<T>(items: &mut [T], rng: &mut impl RngCore) {
    for i in (1..items.len()).rev() {
        let j = uniform_below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

pub fn sample_seed_set(
    pool: &[SeedExample],
    spec: &TaskSpec,
    mode: SamplingMode,
    k: usize,
    rng_seed: u64,
) -> Result<SeedSet, CorpusError> {
    sample_seed_set_with(
        pool,
        spec,
        &SampleRequest {
            mode,
            k,
            rng_seed,
            one_way_label: None,
        },
    )
}

pub fn sample_seed_set_with(pool: &[SeedExample], spec: &TaskSpec, req: &SampleRequest) -> Result<SeedSet, CorpusError> {
    let origin = match req.mode {
        SamplingMode::LlmProposed => Origin::LlmProposed,
        _ => Origin::Human,
    };
    let one_way_label = if req.mode.is_one_way() {
        let label = req.one_way_label.clone().unwrap_or_else(|| spec.labels[0].clone());
        spec.check_label(&label)?;
        Some(label)
    } else {
        None
    };
    let plan: Vec<(&str, usize)> = match req.mode {
        SamplingMode::NWayKShot | SamplingMode::LlmProposed => spec.labels.iter().map(|l| (l.as_str(), req.k)).collect(),
        SamplingMode::OneWayKShot => vec![(one_way_label.as_deref().unwrap(), req.k)],
        SamplingMode::OneWayNkShot => vec![(one_way_label.as_deref().unwrap(), req.k * spec.n_labels())],
    };

    let buckets: Vec<Vec<usize>> = plan
        .iter()
        .map(|(label, _)| {
            pool.iter()
                .enumerate()
                .filter(|(_, ex)| ex.label == *label && ex.origin == origin)
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    for ((label, need), bucket) in plan.iter().zip(&buckets) {
        if bucket.len() < *need {
            return Err(CorpusError::Capacity {
                label: label.to_string(),
                available: bucket.len(),
                required: *need,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(req.rng_seed);
    let mut members = Vec::new();
    for ((_, need), mut bucket) in plan.into_iter().zip(buckets) {
        if need == 0 {
            continue;
        }
        fisher_yates(&mut bucket, &mut rng);
        members.extend(bucket[..need].iter().map(|&i| pool[i].clone()));
    }
    Ok(SeedSet {
        task_id: spec.task_id.clone(),
        mode: req.mode,
        k: req.k,
        rng_seed: req.rng_seed,
        one_way_label,
        members,
    })
}

/// Carves a generation pool of `size` examples out of a larger dataset,
/// keeping file order. With `balanced`, labels get `size / N` slots each and
/// the remainder goes to the earliest labels.
pub fn select_pool(
    dataset: &[SeedExample],
    spec: &TaskSpec,
    size: usize,
    balanced: bool,
    rng_seed: u64,
) -> Result<Vec<SeedExample>, CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut chosen: Vec<usize> = if balanced {
        let n = spec.n_labels();
        let mut picked = Vec::with_capacity(size);
        for (li, label) in spec.labels.iter().enumerate() {
            let need = size / n + usize::from(li < size % n);
            let mut bucket: Vec<usize> = dataset
                .iter()
                .enumerate()
                .filter(|(_, ex)| &ex.label == label)
                .map(|(i, _)| i)
                .collect();
            if bucket.len() < need {
                return Err(CorpusError::Capacity {
                    label: label.clone(),
                    available: bucket.len(),
                    required: need,
                });
            }
            fisher_yates(&mut bucket, &mut rng);
            picked.extend_from_slice(&bucket[..need]);
        }
        picked
    } else {
        if dataset.len() < size {
            return Err(CorpusError::Capacity {
                label: "*".into(),
                available: dataset.len(),
                required: size,
            });
        }
        let mut all: Vec<usize> = (0..dataset.len()).collect();
        fisher_yates(&mut all, &mut rng);
        all.truncate(size);
        all
    };
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| dataset[i].clone()).collect())
}
