mod common;

use attrmanip::eval::{evaluate, fit_centroids, pca_project, Algorithm, KnnModel, LabeledSet};
use common::{cosine, covariance, gaussian_clusters, jacobi_eigen, oracle_knn, oracle_nc};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

fn labeled<'a>(labels: &[String], items: &'a [(String, Vec<f64>)]) -> LabeledSet {
    LabeledSet::new(labels, items.iter().map(|(l, v)| (l.as_str(), v.as_slice()))).unwrap()
}

#[test]
fn centroids_recover_cluster_directions() {
    let c = gaussian_clusters(11, 3, 16, 50, 0, 0.3);
    let model = fit_centroids(&labeled(&c.labels, &c.train)).unwrap();
    for (centroid, dir) in model.centroids.iter().zip(&c.directions) {
        assert!(1.0 - cosine(centroid, dir) < 0.05);
        let norm: f64 = centroid.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}

#[test]
fn classifiers_match_brute_force() {
    for seed in [1, 2, 3] {
        let c = gaussian_clusters(seed, 3, 8, 20, 200, 0.6);
        let set = labeled(&c.labels, &c.train);
        let nc = fit_centroids(&set).unwrap();
        let knn = KnnModel::new(set, 5).unwrap();
        for (_, q) in &c.queries {
            assert_eq!(nc.predict(q).unwrap(), oracle_nc(&c.labels, &c.train, q));
            assert_eq!(knn.predict(q).unwrap(), oracle_knn(&c.labels, &c.train, q, 5));
        }
    }
}

#[test]
fn separated_clusters_score_perfectly_on_themselves() {
    let c = gaussian_clusters(5, 3, 8, 30, 0, 0.05);
    let test: Vec<(&str, &[f64])> = c.train.iter().map(|(l, v)| (l.as_str(), v.as_slice())).collect();
    let acc = evaluate(labeled(&c.labels, &c.train), test.iter().copied(), Algorithm::Nc).unwrap();
    assert_eq!(acc, 1.0);
}

#[test]
fn permuted_gold_is_near_chance() {
    use rand::seq::SliceRandom;
    for seed in 0..5u64 {
        let c = gaussian_clusters(100 + seed, 2, 8, 40, 400, 0.3);
        let mut gold: Vec<String> = c.queries.iter().map(|(l, _)| l.clone()).collect();
        gold.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let test: Vec<(&str, &[f64])> = gold.iter().zip(&c.queries).map(|(g, (_, v))| (g.as_str(), v.as_slice())).collect();
        let acc = evaluate(labeled(&c.labels, &c.train), test.iter().copied(), Algorithm::Nc).unwrap();
        assert!((acc - 0.5).abs() <= 0.1, "seed {seed}: accuracy {acc}");
    }
}

#[test]
fn knn_constructed_three_versus_two() {
    let labels = vec!["a".to_string(), "b".to_string()];
    let train = vec![
        ("b".to_string(), vec![1.0, 0.00]),
        ("b".to_string(), vec![1.0, 0.01]),
        ("a".to_string(), vec![1.0, 0.05]),
        ("a".to_string(), vec![1.0, 0.06]),
        ("a".to_string(), vec![1.0, 0.07]),
        ("b".to_string(), vec![-1.0, 0.0]),
    ];
    let q = [1.0, 0.03];
    let m = KnnModel::new(labeled(&labels, &train), 5).unwrap();
    assert_eq!(m.predict(&q).unwrap(), "a");
    assert_eq!(oracle_knn(&labels, &train, &q, 5), "a");
}

#[test]
fn pca_matches_jacobi_oracle_in_many_dimensions() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let scales: Vec<f64> = (0..12).map(|j| 1.0 / (1.0 + j as f64)).collect();
    let pts: Vec<Vec<f64>> = (0..200)
        .map(|_| scales.iter().map(|s| { let z: f64 = StandardNormal.sample(&mut rng); s * z }).collect::<Vec<f64>>())
        .collect();
    let p = pca_project(&pts).unwrap();
    let (vals, vecs) = jacobi_eigen(&covariance(&pts));
    for k in 0..2 {
        assert!((p.eigenvalues[k] - vals[k]).abs() < 1e-9);
        let dot: f64 = p.components[k].iter().zip(&vecs[k]).map(|(a, b)| a * b).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-9);
    }
    let total: f64 = vals.iter().sum();
    assert!((p.total_variance - total).abs() < 1e-9);
    let projected_var: f64 = (0..2)
        .map(|k| p.points.iter().map(|xy| xy[k] * xy[k]).sum::<f64>() / 199.0)
        .sum();
    assert!(projected_var <= p.total_variance + 1e-12);
    assert_eq!(pca_project(&pts).unwrap(), p);
}
