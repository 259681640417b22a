#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sp2::ingest::{load_tsv, ColumnSpec};
use sp2::model::FactorMatrix;
use sp2::{PublicModel, RatingsDataset};

/// MovieLens-100K `u.data`: `SP2_MOVIELENS`, or `data/ml-100k/u.data` at the
/// workspace root. Panics with instructions when neither exists.
pub fn movielens_path() -> PathBuf {
    if let Ok(p) = std::env::var("SP2_MOVIELENS") {
        return PathBuf::from(p);
    }
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k/u.data");
    assert!(
        p.exists(),
        "MovieLens-100K not found at {}; set SP2_MOVIELENS to the path of u.data",
        p.display()
    );
    p
}

pub fn movielens() -> RatingsDataset {
    load_tsv(movielens_path(), ColumnSpec::tsv()).expect("MovieLens-100K loads")
}

/// Low-rank ratings on a 1..5 scale with a seeded sparsity pattern.
pub fn synthetic(n_users: usize, n_items: usize, density: f64, seed: u64) -> RatingsDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let rank = 3;
    let users: Vec<Vec<f64>> = (0..n_users).map(|_| (0..rank).map(|_| normal.sample(&mut rng)).collect()).collect();
    let items: Vec<Vec<f64>> = (0..n_items).map(|_| (0..rank).map(|_| normal.sample(&mut rng)).collect()).collect();
    let mut triples = Vec::new();
    for (u, pu) in users.iter().enumerate() {
        for (i, qi) in items.iter().enumerate() {
            if rng.random::<f64>() >= density {
                continue;
            }
            let s: f64 = pu.iter().zip(qi).map(|(a, b)| a * b).sum::<f64>() * 0.6 + 3.0 + 0.3 * normal.sample(&mut rng);
            triples.push((u as u32, i as u32, s.round().clamp(1.0, 5.0)));
        }
    }
    RatingsDataset::from_triples(n_users, n_items, (1.0, 5.0), &triples).unwrap()
}

pub fn random_model(n_users: usize, n_items: usize, k: usize, seed: u64) -> PublicModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PublicModel {
        mu: 3.5,
        user_bias: (0..n_users).map(|_| rng.random_range(-0.5..0.5)).collect(),
        user_vec: FactorMatrix::random_normal(n_users, k, 0.5, &mut rng),
        item_bias: (0..n_items).map(|_| rng.random_range(-0.5..0.5)).collect(),
        item_vec: FactorMatrix::random_normal(n_items, k, 0.5, &mut rng),
    }
}
