//! Accuracy and ranking metrics.

use crate::error::{Error, Result};

pub fn rmse(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            actual: predictions.len(),
        });
    }
    if truths.is_empty() {
        return Err(Error::invalid("RMSE of an empty prediction set"));
    }
    let sse: f64 = predictions.iter().zip(truths).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / truths.len() as f64).sqrt())
}

/// One held-out rating with its prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub item: u32,
    pub predicted: f64,
    pub truth: f64,
}

fn dcg(gains: impl Iterator<Item = f64>, cutoff: usize) -> f64 {
    gains
        .take(cutoff)
        .enumerate()
        .map(|(j, g)| g / ((j + 2) as f64).log2())
        .sum()
}

/// NDCG over one user's test items: items ranked by prediction (ties to the
/// lower item id), gain equal to the true rating, `log2(j + 1)` discount at
/// 1-based position `j`. `None` for an empty list or an all-zero ideal.
pub fn user_ndcg(items: &[Scored], cutoff: usize) -> Option<f64> {
    if items.is_empty() {
        return None;
    }
    let mut ranked = items.to_vec();
    ranked.sort_by(|a, b| b.predicted.total_cmp(&a.predicted).then(a.item.cmp(&b.item)));
    let mut ideal: Vec<f64> = items.iter().map(|s| s.truth).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(ideal.into_iter(), cutoff);
    if idcg <= 0.0 {
        return None;
    }
    Some(dcg(ranked.iter().map(|s| s.truth), cutoff) / idcg)
}

/// Mean NDCG@`cutoff` over users with at least one test item.
pub fn ndcg_at(per_user: &[Vec<Scored>], cutoff: usize) -> f64 {
    let scores: Vec<f64> = per_user.iter().filter_map(|u| user_ndcg(u, cutoff)).collect();
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

pub fn ndcg_at_10(per_user: &[Vec<Scored>]) -> f64 {
    ndcg_at(per_user, 10)
}

/// Sample mean and sample standard deviation (`n - 1` denominator; 0 for a
/// single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scored(pairs: &[(f64, f64)]) -> Vec<Scored> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(p, t))| Scored {
                item: i as u32,
                predicted: p,
                truth: t,
            })
            .collect()
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[4.0, 3.0], &[3.0, 5.0]).unwrap() - 2.5f64.sqrt()).abs() < 1e-12);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(user_ndcg(&scored(&[(3.0, 5.0), (2.0, 3.0), (1.0, 1.0)]), 10), Some(1.0));
        assert_eq!(user_ndcg(&scored(&[(0.0, 4.0)]), 10), Some(1.0));
        // predicted order puts the 3 first, then 5, then 1
        let got = user_ndcg(&scored(&[(2.0, 5.0), (3.0, 3.0), (1.0, 1.0)]), 10).unwrap();
        let dcg = 3.0 + 5.0 / 3f64.log2() + 1.0 / 2.0;
        let idcg = 5.0 + 3.0 / 3f64.log2() + 1.0 / 2.0;
        assert!((got - dcg / idcg).abs() < 1e-12);
        assert!((got - 0.900_154).abs() < 1e-6);
    }

    #[test]
    fn ndcg_cuts_at_ten() {
        let items: Vec<_> = (0..15).map(|i| (i as f64, if i == 0 { 5.0 } else { 1.0 })).collect();
        // the 5 is ranked last, outside the top 10
        let got = user_ndcg(&scored(&items), 10).unwrap();
        let dcg: f64 = (0..10).map(|j| 1.0 / ((j + 2) as f64).log2()).sum();
        let idcg = 5.0 + (1..10).map(|j| 1.0 / ((j + 2) as f64).log2()).sum::<f64>();
        assert!((got - dcg / idcg).abs() < 1e-12);
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn ndcg_bounded_and_rank_invariant(
            preds in proptest::collection::vec(-5.0f64..5.0, 1..30),
            truths in proptest::collection::vec(1u8..=5, 30),
        ) {
            let pairs: Vec<_> = preds.iter().zip(&truths).map(|(&p, &t)| (p, f64::from(t))).collect();
            let a = user_ndcg(&scored(&pairs), 10).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
            let moved: Vec<_> = pairs.iter().map(|&(p, t)| (p.exp() * 3.0 + 1.0, t)).collect();
            prop_assert_eq!(a, user_ndcg(&scored(&moved), 10).unwrap());
        }

        #[test]
        fn rmse_matches_two_pass_oracle(v in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..50)) {
            let (p, t): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let diffs: Vec<f64> = p.iter().zip(&t).map(|(a, b)| a - b).collect();
            let mut acc = 0.0;
            for d in &diffs {
                acc += d * d;
            }
            let oracle = (acc / diffs.len() as f64).sqrt();
            prop_assert!((rmse(&p, &t).unwrap() - oracle).abs() < 1e-12);
        }
    }
}
