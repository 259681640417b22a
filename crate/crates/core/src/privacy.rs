//! Beta-distributed privacy ratios and the public/private split of a
//! training set.
//!
//! Under [`Hypothesis::H1`] every user draws a ratio `γ_u` and marks
//! `round(γ_u · |Ω^u|)` of their own ratings private, independently of other
//! users. Under [`Hypothesis::H2`] every item draws `γ_i` and that fraction of
//! the item's ratings is private, so marks on one item are correlated across
//! users. Rounding is half-to-even.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::write_tsv;
use crate::model::{Rating, RatingsDataset};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaLabel {
    Balanced,
    Extreme,
    Pessimistic,
    Optimistic,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaConfig {
    pub alpha: f64,
    pub beta: f64,
    pub label: BetaLabel,
}

impl BetaConfig {
    /// Mostly balanced, `(2, 2)`.
    pub const BALANCED: BetaConfig = BetaConfig::named(2.0, 2.0, BetaLabel::Balanced);
    /// Mostly extreme, `(0.5, 0.5)`.
    pub const EXTREME: BetaConfig = BetaConfig::named(0.5, 0.5, BetaLabel::Extreme);
    /// Mostly pessimistic, `(5, 1)`.
    pub const PESSIMISTIC: BetaConfig = BetaConfig::named(5.0, 1.0, BetaLabel::Pessimistic);
    /// Mostly optimistic, `(1, 5)`.
    pub const OPTIMISTIC: BetaConfig = BetaConfig::named(1.0, 5.0, BetaLabel::Optimistic);

    pub const ALL_NAMED: [BetaConfig; 4] = [
        Self::BALANCED,
        Self::EXTREME,
        Self::PESSIMISTIC,
        Self::OPTIMISTIC,
    ];

    const fn named(alpha: f64, beta: f64, label: BetaLabel) -> Self {
        BetaConfig { alpha, beta, label }
    }

    pub fn custom(alpha: f64, beta: f64) -> Self {
        Self::named(alpha, beta, BetaLabel::Custom)
    }

    /// Beta with the given mean and concentration `alpha + beta`.
    pub fn with_mean(mean: f64, concentration: f64) -> Self {
        Self::custom(mean * concentration, (1.0 - mean) * concentration)
    }

    pub fn from_label(label: BetaLabel) -> Option<Self> {
        Self::ALL_NAMED.into_iter().find(|c| c.label == label)
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0) || !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::invalid(format!(
                "beta shapes must be positive, got ({}, {})",
                self.alpha, self.beta
            )));
        }
        if let Some(named) = Self::from_label(self.label) {
            if (named.alpha, named.beta) != (self.alpha, self.beta) {
                return Err(Error::invalid(format!(
                    "label {:?} implies ({}, {})",
                    self.label, named.alpha, named.beta
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    H1,
    H2,
}

/// `n` i.i.d. draws from `Beta(alpha, beta)`.
pub fn sample_beta(config: &BetaConfig, n: usize, seed: u64) -> Result<Vec<f64>> {
    config.validate()?;
    if n < 1 {
        return Err(Error::invalid("sample_beta needs n >= 1"));
    }
    let dist = Beta::new(config.alpha, config.beta)
        .map_err(|e| Error::invalid(format!("beta distribution: {e}")))?;
    let mut rng = rng::stream(seed, "beta", 0);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

pub fn private_count(ratio: f64, n: usize) -> usize {
    let c = (ratio * n as f64).round_ties_even();
    (c.max(0.0) as usize).min(n)
}

#[derive(Debug, Clone)]
pub struct PrivacyPartition {
    pub public: RatingsDataset,
    /// `Ω^u_private` for every user id.
    pub private_per_user: Vec<Vec<Rating>>,
    /// Realised `γ_u` (H1, one per user) or `γ_i` (H2, one per item).
    pub ratios: Vec<f64>,
    pub hypothesis: Hypothesis,
}

impl PrivacyPartition {
    pub fn n_private(&self) -> usize {
        self.private_per_user.iter().map(Vec::len).sum()
    }

    /// Fraction of all training ratings marked private.
    pub fn private_fraction(&self) -> f64 {
        let private = self.n_private();
        let total = private + self.public.len();
        if total == 0 {
            0.0
        } else {
            private as f64 / total as f64
        }
    }

    pub fn mean_ratio(&self) -> f64 {
        if self.ratios.is_empty() {
            0.0
        } else {
            self.ratios.iter().sum::<f64>() / self.ratios.len() as f64
        }
    }

    /// Public and private ratings, concatenated.
    pub fn all_ratings(&self) -> Vec<Rating> {
        let mut all = self.public.ratings().to_vec();
        for p in &self.private_per_user {
            all.extend_from_slice(p);
        }
        all
    }

    /// Checks that public and private are disjoint and together equal `source`.
    pub fn check_disjoint_union(&self, source: &RatingsDataset) -> Result<()> {
        let key = |r: &Rating| (r.user, r.item, r.value.to_bits());
        let mut ours: Vec<_> = self.all_ratings().iter().map(key).collect();
        let mut theirs: Vec<_> = source.ratings().iter().map(key).collect();
        ours.sort_unstable();
        theirs.sort_unstable();
        if ours.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("public and private ratings overlap"));
        }
        if ours != theirs {
            return Err(Error::invalid("partition does not cover the source dataset"));
        }
        for (u, ratings) in self.private_per_user.iter().enumerate() {
            if ratings.iter().any(|r| r.user as usize != u) {
                return Err(Error::invalid(format!("private shard {u} holds another user's rating")));
            }
        }
        Ok(())
    }

    /// Writes `public.tsv`, one `private/<user>.tsv` per user with private
    /// ratings, and `manifest.json`.
    pub fn export(&self, dir: impl AsRef<Path>, config: &BetaConfig, seed: u64) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("private"))?;
        write_tsv(&self.public, dir.join("public.tsv"))?;
        for (u, ratings) in self.private_per_user.iter().enumerate() {
            if ratings.is_empty() {
                continue;
            }
            let raw = self.public.user_ids().raw(u as u32).unwrap_or_default().to_owned();
            let shard = self.public.with_ratings(ratings.clone());
            write_tsv(&shard, dir.join("private").join(format!("{raw}.tsv")))?;
        }
        let manifest = serde_json::json!({
            "seed": seed,
            "hypothesis": self.hypothesis,
            "alpha": config.alpha,
            "beta": config.beta,
            "label": config.label,
            "mean_ratio": self.mean_ratio(),
            "private_fraction": self.private_fraction(),
            "n_public": self.public.len(),
            "n_private": self.n_private(),
        });
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

pub fn allocate_h1(train: &RatingsDataset, config: &BetaConfig, seed: u64) -> Result<PrivacyPartition> {
    let ratios = sample_beta(config, train.n_users().max(1), seed)?;
    allocate_with_ratios(train, Hypothesis::H1, ratios, seed)
}

pub fn allocate_h2(train: &RatingsDataset, config: &BetaConfig, seed: u64) -> Result<PrivacyPartition> {
    let ratios = sample_beta(config, train.n_items().max(1), seed)?;
    allocate_with_ratios(train, Hypothesis::H2, ratios, seed)
}

pub fn allocate(
    train: &RatingsDataset,
    hypothesis: Hypothesis,
    config: &BetaConfig,
    seed: u64,
) -> Result<PrivacyPartition> {
    match hypothesis {
        Hypothesis::H1 => allocate_h1(train, config, seed),
        Hypothesis::H2 => allocate_h2(train, config, seed),
    }
}

/// Partition with explicit per-user (H1) or per-item (H2) ratios. The
/// selection of which ratings become private is seeded per group, so it does
/// not depend on iteration order.
pub fn allocate_with_ratios(
    train: &RatingsDataset,
    hypothesis: Hypothesis,
    ratios: Vec<f64>,
    seed: u64,
) -> Result<PrivacyPartition> {
    if train.is_empty() {
        return Err(Error::invalid("cannot allocate privacy on an empty training set"));
    }
    let n_groups = match hypothesis {
        Hypothesis::H1 => train.n_users(),
        Hypothesis::H2 => train.n_items(),
    };
    if ratios.len() < n_groups {
        return Err(Error::DimensionMismatch {
            expected: n_groups,
            actual: ratios.len(),
        });
    }
    if ratios.iter().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(Error::invalid("privacy ratios must lie in [0, 1]"));
    }

    let ratings = train.ratings();
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_groups];
    for (idx, r) in ratings.iter().enumerate() {
        let g = match hypothesis {
            Hypothesis::H1 => r.user,
            Hypothesis::H2 => r.item,
        };
        groups[g as usize].push(idx);
    }
    let tag = match hypothesis {
        Hypothesis::H1 => "h1-select",
        Hypothesis::H2 => "h2-select",
    };

    let mut is_private = vec![false; ratings.len()];
    for (g, members) in groups.iter_mut().enumerate() {
        let count = private_count(ratios[g], members.len());
        if count == 0 {
            continue;
        }
        members.shuffle(&mut rng::stream(seed, tag, g as u64));
        for &idx in &members[..count] {
            is_private[idx] = true;
        }
    }

    let mut public = Vec::with_capacity(ratings.len());
    let mut private_per_user = vec![Vec::new(); train.n_users()];
    for (r, &private) in ratings.iter().zip(&is_private) {
        if private {
            private_per_user[r.user as usize].push(*r);
        } else {
            public.push(*r);
        }
    }
    Ok(PrivacyPartition {
        public: train.with_ratings(public),
        private_per_user,
        ratios,
        hypothesis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(xs: &[f64]) -> f64 {
        xs.iter().sum::<f64>() / xs.len() as f64
    }

    #[test]
    fn beta_means() {
        let uniform = sample_beta(&BetaConfig::custom(1.0, 1.0), 100_000, 3).unwrap();
        assert!((mean(&uniform) - 0.5).abs() < 0.01);
        assert!(uniform.iter().all(|x| (0.0..=1.0).contains(x)));
        let opt = sample_beta(&BetaConfig::OPTIMISTIC, 100_000, 3).unwrap();
        assert!((mean(&opt) - 1.0 / 6.0).abs() < 0.01);
        // reported realised mean for this configuration is 0.17
        assert!((mean(&opt) - 0.17).abs() < 0.01);
        let pes = sample_beta(&BetaConfig::PESSIMISTIC, 100_000, 3).unwrap();
        assert!((mean(&pes) - 5.0 / 6.0).abs() < 0.01);
        assert!((mean(&pes) - 0.82).abs() < 0.02);
    }

    #[test]
    fn beta_rejects_bad_shapes() {
        assert!(sample_beta(&BetaConfig::custom(0.0, 1.0), 5, 0).is_err());
        assert!(sample_beta(&BetaConfig::custom(1.0, -2.0), 5, 0).is_err());
        let mislabeled = BetaConfig {
            alpha: 3.0,
            beta: 2.0,
            label: BetaLabel::Balanced,
        };
        assert!(mislabeled.validate().is_err());
    }

    #[test]
    fn beta_is_deterministic() {
        let a = sample_beta(&BetaConfig::BALANCED, 50, 9).unwrap();
        let b = sample_beta(&BetaConfig::BALANCED, 50, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rounding_is_half_to_even() {
        assert_eq!(private_count(0.5, 10), 5);
        assert_eq!(private_count(0.25, 10), 2); // 2.5 -> 2
        assert_eq!(private_count(0.35, 10), 4); // 3.5 -> 4
        assert_eq!(private_count(0.75, 4), 3);
        assert_eq!(private_count(1.0, 7), 7);
        assert_eq!(private_count(0.0, 7), 0);
    }

    fn two_users() -> RatingsDataset {
        let mut triples = Vec::new();
        for i in 0..10 {
            triples.push((0, i, 4.0));
        }
        for i in 0..4 {
            triples.push((1, i, 2.0));
        }
        RatingsDataset::from_triples(2, 10, (1.0, 5.0), &triples).unwrap()
    }

    #[test]
    fn h1_boundaries_and_half() {
        let ds = two_users();
        let p = allocate_with_ratios(&ds, Hypothesis::H1, vec![0.0, 1.0], 1).unwrap();
        assert!(p.private_per_user[0].is_empty());
        assert_eq!(p.private_per_user[1].len(), 4);
        p.check_disjoint_union(&ds).unwrap();

        let p = allocate_with_ratios(&ds, Hypothesis::H1, vec![0.5, 0.0], 1).unwrap();
        assert_eq!(p.private_per_user[0].len(), 5);
        assert_eq!(p.public.len(), 9);
        p.check_disjoint_union(&ds).unwrap();
    }

    #[test]
    fn h2_item_identities() {
        // item 0 has 2 raters here; build one with 4 raters
        let triples: Vec<_> = (0..4).map(|u| (u, 0, 3.0)).chain((0..4).map(|u| (u, 1, 5.0))).collect();
        let ds = RatingsDataset::from_triples(4, 2, (1.0, 5.0), &triples).unwrap();
        let p = allocate_with_ratios(&ds, Hypothesis::H2, vec![0.75, 0.0], 5).unwrap();
        let private_on_0 = p.all_ratings().len() - p.public.len();
        assert_eq!(private_on_0, 3);
        assert!(p.public.ratings().iter().filter(|r| r.item == 1).count() == 4);
        p.check_disjoint_union(&ds).unwrap();
    }

    #[test]
    fn allocation_is_deterministic() {
        let ds = two_users();
        let a = allocate_h1(&ds, &BetaConfig::BALANCED, 11).unwrap();
        let b = allocate_h1(&ds, &BetaConfig::BALANCED, 11).unwrap();
        assert_eq!(a.public.ratings(), b.public.ratings());
        assert_eq!(a.private_per_user, b.private_per_user);
        a.check_disjoint_union(&ds).unwrap();
        let c = allocate_h2(&ds, &BetaConfig::EXTREME, 11).unwrap();
        c.check_disjoint_union(&ds).unwrap();
    }

    fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
        let (mx, my) = (mean(xs), mean(ys));
        let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn hypothesis_correlation_signatures() {
        // users 0 and 1 both rate items 0..6
        let triples: Vec<_> = (0..2).flat_map(|u| (0..6).map(move |i| (u, i, 3.0))).collect();
        let ds = RatingsDataset::from_triples(2, 6, (1.0, 5.0), &triples).unwrap();
        let marks = |h: Hypothesis, cfg: &BetaConfig| {
            let (mut x, mut y) = (Vec::new(), Vec::new());
            for seed in 0..3000 {
                let p = allocate(&ds, h, cfg, seed).unwrap();
                let private = |u: usize| p.private_per_user[u].iter().any(|r| r.item == 0);
                x.push(f64::from(u8::from(private(0))));
                y.push(f64::from(u8::from(private(1))));
            }
            correlation(&x, &y)
        };
        assert!(marks(Hypothesis::H1, &BetaConfig::BALANCED).abs() < 0.07);
        assert!(marks(Hypothesis::H2, &BetaConfig::EXTREME) > 0.3);
    }

    #[test]
    fn export_writes_manifest() {
        let ds = two_users();
        let p = allocate_with_ratios(&ds, Hypothesis::H1, vec![0.5, 0.5], 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        p.export(dir.path(), &BetaConfig::BALANCED, 2).unwrap();
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["n_private"], 7);
        assert!(dir.path().join("private/0.tsv").exists());
        assert!(dir.path().join("public.tsv").exists());
    }
}
