//! Two-component PCA by symmetric eigendecomposition of the covariance
//! matrix (or of the Gram matrix when there are fewer points than
//! dimensions; both share the same nonzero spectrum).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::EvalError;

pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    /// Two unit, orthogonal rows of length `dim`.
    pub components: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Top two covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Eigenvalues over total variance.
    pub explained_ratio: Vec<f64>,
    pub total_variance: f64,
    pub points: Vec<[f64; 2]>,
}

fn top_two(m: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<DVector<f64>>), EvalError> {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let scale = m.norm().max(1.0);
    let mut vals = Vec::new();
    let mut vecs = Vec::new();
    for &i in order.iter().take(2) {
        let v = eig.eigenvectors.column(i).into_owned();
        let lambda = eig.eigenvalues[i];
        let residual = (m * &v - &v * lambda).norm();
        if residual > RESIDUAL_TOL * scale {
            return Err(EvalError::EigenResidual { residual });
        }
        vals.push(lambda);
        vecs.push(v);
    }
    Ok((vals, vecs))
}

/// Flips `v` so its largest-magnitude coordinate (first on ties) is positive.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn pca_project(points: &[Vec<f64>]) -> Result<PcaProjection, EvalError> {
    let n = points.len();
    if n < 3 {
        return Err(EvalError::TooFewPoints(n));
    }
    let dim = points[0].len();
    if dim < 2 {
        return Err(EvalError::Degenerate("need at least 2 dimensions".into()));
    }
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(EvalError::DimMismatch {
            expected: dim,
            found: p.len(),
        });
    }
    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let xc = DMatrix::from_fn(n, dim, |i, j| points[i][j] - mean[j]);
    let denom = (n - 1) as f64;

    let (eigenvalues, components): (Vec<f64>, Vec<Vec<f64>>) = if n < dim {
        let gram = (&xc * xc.transpose()) / denom;
        let (vals, vecs) = top_two(&gram)?;
        let mut comps = Vec::new();
        for u in &vecs {
            let v = xc.transpose() * u;
            let norm = v.norm();
            if norm == 0.0 {
                return Err(EvalError::Degenerate("fewer than 2 nonzero eigenvalues".into()));
            }
            comps.push((v / norm).iter().copied().collect());
        }
        (vals, comps)
    } else {
        let cov = (xc.transpose() * &xc) / denom;
        let (vals, vecs) = top_two(&cov)?;
        (vals, vecs.iter().map(|v| v.iter().copied().collect()).collect())
    };

    let total_variance = xc.iter().map(|x| x * x).sum::<f64>() / denom;
    let floor = 1e-12 * total_variance;
    if total_variance <= 0.0 || eigenvalues.iter().filter(|&&l| l > floor).count() < 2 {
        return Err(EvalError::Degenerate("fewer than 2 nonzero eigenvalues".into()));
    }
    let mut components = components;
    components.iter_mut().for_each(|c| fix_sign(c));
    let projected = (0..n)
        .map(|i| {
            let row = xc.row(i);
            let f = |c: &Vec<f64>| row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [f(&components[0]), f(&components[1])]
        })
        .collect();
    Ok(PcaProjection {
        explained_ratio: eigenvalues.iter().map(|l| l / total_variance).collect(),
        eigenvalues,
        components,
        mean,
        total_variance,
        points: projected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_points() {
        let pts: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![i as f64 - 4.5, if i % 2 == 0 { 1e-3 } else { -1e-3 }, 0.0])
            .collect();
        let p = pca_project(&pts).unwrap();
        assert!((p.components[0][0] - 1.0).abs() < 1e-6);
        assert!(p.explained_ratio[0] > p.explained_ratio[1]);
    }

    #[test]
    fn sign_flip_under_negation() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![-(i as f64), 0.5 * ((i * 7) % 3) as f64]).collect();
        let p = pca_project(&pts).unwrap();
        for c in &p.components {
            let (i, _) = c.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap();
            assert!(c[i] > 0.0);
        }
    }

    #[test]
    fn collinear_is_degenerate() {
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        assert!(matches!(pca_project(&pts), Err(EvalError::Degenerate(_))));
        assert!(matches!(pca_project(&pts[..2]), Err(EvalError::TooFewPoints(2))));
    }

    #[test]
    fn gram_path_matches_covariance_path() {
        let pts: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..10).map(|j| ((i * 31 + j * 17) as f64).sin() * (1.0 + j as f64)).collect())
            .collect();
        let wide = pca_project(&pts).unwrap();
        let mut tall = pts.clone();
        tall.extend(pts.iter().cloned());
        tall.extend(pts.iter().cloned());
        let t = pca_project(&tall).unwrap();
        for k in 0..2 {
            assert!((wide.explained_ratio[k] - t.explained_ratio[k]).abs() < 1e-9);
            let d: f64 = wide.components[k].iter().zip(&t.components[k]).map(|(a, b)| (a - b).abs()).sum();
            assert!(d < 1e-8, "component {k} differs by {d}");
        }
    }
}
