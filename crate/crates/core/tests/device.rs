mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sp2::device::{Device, DeviceContext};
use sp2::ingest::kfold;
use sp2::privacy::{allocate, BetaConfig, Hypothesis};
use sp2::server::{build_aux, train_public, AuxData, AuxParams, AuxSource, JointModel, NaiveAux};
use sp2::{FactorMatrix, Hyperparams, PublicModel, Rating};

fn private_set(user: u32, n_items: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<Rating> {
    let items: Vec<u32> = (0..n_items as u32).collect();
    items
        .choose_multiple(rng, n.min(n_items))
        .map(|&i| Rating::new(user, i, f64::from(rng.random_range(1..=5u8))))
        .collect()
}

fn hp(k: usize, epochs: usize, seed: u64) -> Hyperparams {
    Hyperparams {
        k,
        epochs,
        learning_rate: 0.05,
        seed,
        ..Hyperparams::default()
    }
}

fn factor(m: &PublicModel, u: u32) -> (f64, Vec<f64>) {
    let (b, p) = m.user_factor(u).unwrap();
    (b, p.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn singleton_clusters_are_bit_identical_to_naive(
        seed in any::<u64>(),
        n_items in 2usize..=30,
        k in 1usize..=6,
        n_private in 0usize..=12,
        epochs in 0usize..=5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = common::random_model(4, n_items, k, seed);
        let naive = build_aux(AuxSource::Public(&m), AuxParams::Naive).unwrap();
        let cluster = build_aux(
            AuxSource::Public(&m),
            AuxParams::Cluster { n_clusters: n_items, bloom: false, seed },
        )
        .unwrap();
        let user = rng.random_range(0..4u32);
        let private = private_set(user, n_items, n_private, &mut rng);
        let hp = hp(k, epochs, seed);
        let a = Device::train(&DeviceContext::new(user, factor(&m, user), &naive, private.clone(), hp).unwrap()).unwrap();
        let b = Device::train(&DeviceContext::new(user, factor(&m, user), &cluster, private, hp).unwrap()).unwrap();
        prop_assert_eq!(a.private_model().user_bias().to_bits(), b.private_model().user_bias().to_bits());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(a.private_model().user_vec()), bits(b.private_model().user_vec()));
        for i in 0..n_items as u32 {
            prop_assert_eq!(a.predict(i).unwrap().to_bits(), b.predict(i).unwrap().to_bits());
        }
    }

    #[test]
    fn joint_device_equals_naive_on_reconstructed_factors(
        seed in any::<u64>(),
        n_items in 2usize..=15,
        z in 1usize..=5,
        r_pick in 1usize..=5,
        n_private in 0usize..=8,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 3;
        let top_r = r_pick.min(z);
        let jm = JointModel {
            mu: 3.4,
            user_bias: vec![0.1, -0.1],
            user_vec: FactorMatrix::random_normal(2, k, 0.5, &mut rng),
            item_bias: (0..n_items).map(|_| rng.random_range(-0.4..0.4)).collect(),
            item_weights: FactorMatrix::from_vec(
                n_items,
                z,
                (0..n_items * z).map(|_| rng.random_range(0.0..1.0)).collect(),
            )
            .unwrap(),
            centers: FactorMatrix::random_normal(z, k, 0.5, &mut rng),
        };
        let joint = build_aux(AuxSource::Joint(&jm), AuxParams::Joint { top_r }).unwrap();

        // top-R by weight (ties to the lower id), summed center by center
        let mut item_vec = FactorMatrix::zeros(n_items, k);
        for i in 0..n_items {
            let w = jm.item_weights.row(i);
            let mut ids: Vec<usize> = (0..z).collect();
            ids.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap().then(a.cmp(&b)));
            for &c in &ids[..top_r] {
                for f in 0..k {
                    item_vec.row_mut(i)[f] += w[c] * jm.centers.row(c)[f];
                }
            }
        }
        let naive = AuxData::Naive(NaiveAux { mu: jm.mu, item_bias: jm.item_bias.clone(), item_vec });

        let user = 1;
        let pf = (jm.user_bias[1], jm.user_vec.row(1).to_vec());
        let private = private_set(user, n_items, n_private, &mut rng);
        let hp = hp(k, 3, seed);
        let a = Device::train(&DeviceContext::new(user, pf.clone(), &joint, private.clone(), hp).unwrap()).unwrap();
        let b = Device::train(&DeviceContext::new(user, pf, &naive, private, hp).unwrap()).unwrap();
        prop_assert!((a.private_model().user_bias() - b.private_model().user_bias()).abs() < 1e-12);
        for (x, y) in a.private_model().user_vec().iter().zip(b.private_model().user_vec()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        for i in 0..n_items as u32 {
            prop_assert!((a.predict(i).unwrap() - b.predict(i).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn local_top_n_matches_sort_oracle(
        seed in any::<u64>(),
        n_items in 1usize..=20,
        n_private in 0usize..=6,
        n in 1usize..=20,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = common::random_model(1, n_items, 3, seed);
        let aux = build_aux(AuxSource::Public(&m), AuxParams::Naive).unwrap();
        let private = private_set(0, n_items, n_private, &mut rng);
        let exclude: HashSet<u32> = private.iter().map(|r| r.item).collect();
        let d = Device::train(&DeviceContext::new(0, factor(&m, 0), &aux, private, hp(3, 2, seed)).unwrap()).unwrap();
        let got = d.local_top_n(n, &exclude).unwrap();

        let pm = d.private_model();
        let mut all: Vec<(f64, u32)> = (0..n_items as u32)
            .filter(|i| !exclude.contains(i))
            .map(|i| {
                let (b, q) = d.local_item_factor(i).unwrap();
                let dot: f64 = q.iter().zip(pm.user_vec()).map(|(a, b)| a * b).sum();
                (m.mu + pm.user_bias() + b + dot, i)
            })
            .collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let want: Vec<u32> = all.into_iter().take(n).map(|(_, i)| i).collect();
        prop_assert_eq!(got, want);
    }
}

#[test]
fn one_private_rating_hand_executed() {
    let m = sp2::server::constant_model(3.0, 1, 2, 2);
    let aux = build_aux(AuxSource::Public(&m), AuxParams::Naive).unwrap();
    let hp = Hyperparams { k: 2, epochs: 1, learning_rate: 0.1, regularization: 0.0, ..Hyperparams::default() };
    let ctx = DeviceContext::new(0, (0.0, vec![0.0; 2]), &aux, vec![Rating::new(0, 1, 5.0)], hp).unwrap();
    let d = Device::train(&ctx).unwrap();
    assert!((d.private_model().user_bias() - 0.2).abs() < 1e-12);
    assert_eq!(d.private_model().user_vec(), &[0.0, 0.0]);
    let (b1, q1) = d.local_item_factor(1).unwrap();
    assert!((b1 - 0.2).abs() < 1e-12);
    assert_eq!(q1, vec![0.0, 0.0]);
    // the untouched item keeps its broadcast factor
    assert_eq!(d.local_item_factor(0).unwrap(), (0.0, vec![0.0, 0.0]));
}

#[test]
fn fine_tuning_reduces_private_loss_on_movielens() {
    let ds = common::movielens();
    let fold = kfold(&ds, 5, 0).unwrap().remove(0);
    let part = allocate(&fold.train, Hypothesis::H1, &BetaConfig::BALANCED, 0).unwrap();
    let hp = Hyperparams::default();
    let model = train_public(&part.public, &hp).unwrap();
    let aux = build_aux(AuxSource::Public(&model), AuxParams::Naive).unwrap();

    let sse = |pred: &dyn Fn(&Rating) -> f64, rs: &[Rating]| rs.iter().map(|r| (r.value - pred(r)).powi(2)).sum::<f64>();
    let (mut before, mut after, mut improved, mut users) = (0.0, 0.0, 0, 0);
    for (u, private) in part.private_per_user.iter().enumerate() {
        if private.is_empty() {
            continue;
        }
        let u = u as u32;
        let ctx = DeviceContext::new(u, factor(&model, u), &aux, private.clone(), hp).unwrap();
        let d = Device::train(&ctx).unwrap();
        let b = sse(&|r| model.predict(u, r.item).unwrap(), private);
        let a = sse(&|r| d.predict(r.item).unwrap(), private);
        before += b;
        after += a;
        users += 1;
        if a <= b {
            improved += 1;
        }
    }
    assert!(after < before, "private SSE {after} vs public {before}");
    assert!(improved as f64 > 0.9 * users as f64, "{improved} of {users} users improved");
}
