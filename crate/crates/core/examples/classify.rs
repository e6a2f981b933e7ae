//! Fits nearest-centroid and KNN classifiers on synthetic clustered
//! embeddings and scores a held-out set.
//!
//! cargo run --example classify

use attrmanip::eval::{evaluate, fit_centroids, Algorithm, LabeledSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(rng: &mut ChaCha8Rng, center: &[f64]) -> Vec<f64> {
    center.iter().map(|c| c + rng.random_range(-0.4..0.4)).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let labels: Vec<String> = ["world", "sports", "business"].map(String::from).to_vec();
    let centers = [[1.0, 0.0, 0.0, 0.2], [0.0, 1.0, 0.0, 0.2], [0.0, 0.0, 1.0, 0.2]];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<(String, Vec<f64>)> {
        (0..n)
            .map(|i| (labels[i % 3].clone(), sample(rng, &centers[i % 3])))
            .collect()
    };
    let train = draw(&mut rng, 30);
    let test = draw(&mut rng, 90);
    let set = || LabeledSet::new(&labels, train.iter().map(|(l, v)| (l.as_str(), v.as_slice())));

    let model = fit_centroids(&set()?)?;
    println!("first test point -> {}", model.predict(&test[0].1)?);
    for algorithm in [Algorithm::Nc, Algorithm::Knn { k: 5 }] {
        let acc = evaluate(set()?, test.iter().map(|(l, v)| (l.as_str(), v.as_slice())), algorithm)?;
        println!("{}: accuracy {:.3}", algorithm.name(), acc);
    }
    Ok(())
}
