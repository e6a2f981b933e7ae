//! Cosine nearest-centroid and k-nearest-neighbour classifiers. Inputs are
//! L2-normalized on entry, so similarity is a plain dot product.

use super::EvalError;
use crate::embed::normalize_values;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Training vectors with label indices into `labels`.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    labels: Vec<String>,
    rows: Vec<Vec<f64>>,
    y: Vec<usize>,
    dim: usize,
}

impl LabeledSet {
    pub fn new<'a>(labels: &[String], items: impl IntoIterator<Item = (&'a str, &'a [f64])>) -> Result<Self, EvalError> {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut dim = None;
        for (label, v) in items {
            let idx = labels
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| EvalError::UnknownLabel(label.to_string()))?;
            check_dim(&mut dim, v.len())?;
            rows.push(normalize_values(v)?);
            y.push(idx);
        }
        Ok(Self {
            labels: labels.to_vec(),
            rows,
            y,
            dim: dim.unwrap_or(0),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

fn check_dim(dim: &mut Option<usize>, found: usize) -> Result<(), EvalError> {
    match *dim {
        Some(expected) if expected != found => Err(EvalError::DimMismatch { expected, found }),
        _ => {
            *dim = Some(found);
            Ok(())
        }
    }
}

fn query_unit(dim: usize, q: &[f64]) -> Result<Vec<f64>, EvalError> {
    if q.len() != dim {
        return Err(EvalError::DimMismatch {
            expected: dim,
            found: q.len(),
        });
    }
    Ok(normalize_values(q)?)
}

#[derive(Debug, Clone)]
pub struct CentroidModel {
    pub labels: Vec<String>,
    /// Unit-norm, one per label, in label order.
    pub centroids: Vec<Vec<f64>>,
}

/// Centroid of a label = normalized mean of its normalized members.
pub fn fit_centroids(train: &LabeledSet) -> Result<CentroidModel, EvalError> {
    let mut centroids = Vec::with_capacity(train.labels.len());
    for (li, label) in train.labels.iter().enumerate() {
        let mut sum = vec![0.0; train.dim];
        let mut n = 0usize;
        for (row, _) in train.rows.iter().zip(&train.y).filter(|(_, &y)| y == li) {
            for (s, x) in sum.iter_mut().zip(row) {
                *s += x;
            }
            n += 1;
        }
        if n == 0 {
            return Err(EvalError::EmptyClass(label.clone()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        if crate::embed::l2_norm(&mean) < 1e-12 {
            return Err(EvalError::DegenerateCentroid(label.clone()));
        }
        centroids.push(normalize_values(&mean)?);
    }
    Ok(CentroidModel {
        labels: train.labels.clone(),
        centroids,
    })
}

impl CentroidModel {
    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Label index of the most similar centroid; exact ties keep the earlier label.
    pub fn predict_index(&self, q: &[f64]) -> Result<usize, EvalError> {
        let q = query_unit(self.dim(), q)?;
        let mut best = (0, f64::NEG_INFINITY);
        for (i, c) in self.centroids.iter().enumerate() {
            let s = dot(&q, c);
            if s > best.1 {
                best = (i, s);
            }
        }
        Ok(best.0)
    }

    pub fn predict(&self, q: &[f64]) -> Result<&str, EvalError> {
        Ok(&self.labels[self.predict_index(q)?])
    }
}

#[derive(Debug, Clone)]
pub struct KnnModel {
    train: LabeledSet,
    k: usize,
}

impl KnnModel {
    pub fn new(train: LabeledSet, k: usize) -> Result<Self, EvalError> {
        if k == 0 || k > train.len() {
            return Err(EvalError::InvalidK { k, train: train.len() });
        }
        Ok(Self { train, k })
    }

    /// Majority label among the k most similar training points. Neighbour
    /// rank ties go to the earlier training point; vote ties go to the larger
    /// summed similarity, then the earlier label.
    pub fn predict_index(&self, q: &[f64]) -> Result<usize, EvalError> {
        let q = query_unit(self.train.dim, q)?;
        let sims: Vec<f64> = self.train.rows.iter().map(|r| dot(&q, r)).collect();
        let mut order: Vec<usize> = (0..sims.len()).collect();
        order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
        let mut votes = vec![(0usize, 0.0f64); self.train.labels.len()];
        for &i in &order[..self.k] {
            let v = &mut votes[self.train.y[i]];
            v.0 += 1;
            v.1 += sims[i];
        }
        let mut best = 0;
        for (li, v) in votes.iter().enumerate().skip(1) {
            let b = votes[best];
            if v.0 > b.0 || (v.0 == b.0 && v.1 > b.1) {
                best = li;
            }
        }
        Ok(best)
    }

    pub fn predict(&self, q: &[f64]) -> Result<&str, EvalError> {
        Ok(&self.train.labels[self.predict_index(q)?])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum Algorithm {
    Nc,
    Knn { k: usize },
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Nc => "nc",
            Self::Knn { .. } => "knn",
        }
    }

    pub fn k(self) -> Option<usize> {
        match self {
            Self::Nc => None,
            Self::Knn { k } => Some(k),
        }
    }
}

pub enum Classifier {
    Nc(CentroidModel),
    Knn(KnnModel),
}

impl Classifier {
    pub fn fit(train: LabeledSet, algorithm: Algorithm) -> Result<Self, EvalError> {
        match algorithm {
            Algorithm::Nc => Ok(Self::Nc(fit_centroids(&train)?)),
            Algorithm::Knn { k } => Ok(Self::Knn(KnnModel::new(train, k)?)),
        }
    }

    pub fn predict(&self, q: &[f64]) -> Result<&str, EvalError> {
        match self {
            Self::Nc(m) => m.predict(q),
            Self::Knn(m) => m.predict(q),
        }
    }
}

/// Micro-accuracy of `algorithm` trained on `train` over `test`.
pub fn evaluate<'a>(
    train: LabeledSet,
    test: impl IntoIterator<Item = (&'a str, &'a [f64])>,
    algorithm: Algorithm,
) -> Result<f64, EvalError> {
    let model = Classifier::fit(train, algorithm)?;
    let mut n = 0usize;
    let mut hits = 0usize;
    for (gold, q) in test {
        n += 1;
        if model.predict(q)? == gold {
            hits += 1;
        }
    }
    if n == 0 {
        return Err(EvalError::EmptyTestSet);
    }
    Ok(hits as f64 / n as f64)
}
