//! Comparison systems: the two extreme baselines, the only-public model, a
//! noisy-average differential-privacy baseline and three peer-obfuscation
//! policies.

use std::collections::{HashMap, HashSet};

use rand::seq::IndexedRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FactorMatrix, Hyperparams, PublicModel, Rating, RatingsDataset, UserId};
use crate::privacy::PrivacyPartition;
use crate::rng;
use crate::server::sgd::{constant_model, train_public};

/// Everyone shares everything: the public model trained on the whole
/// training fold.
pub fn abs_optimistic(train_full: &RatingsDataset, hp: &Hyperparams) -> Result<PublicModel> {
    train_public(train_full, hp)
}

/// Nobody shares anything: each user is predicted by their own mean rating.
#[derive(Debug, Clone, PartialEq)]
pub struct UserMeanPredictor {
    pub global_mean: f64,
    pub user_means: Vec<Option<f64>>,
}

impl UserMeanPredictor {
    /// Users with no rating fall back to the global mean, or to the scale
    /// midpoint when there are no ratings at all.
    pub fn predict(&self, user: UserId) -> f64 {
        self.user_means
            .get(user as usize)
            .copied()
            .flatten()
            .unwrap_or(self.global_mean)
    }
}

pub fn abs_pessimistic(train_full: &RatingsDataset) -> UserMeanPredictor {
    let (lo, hi) = train_full.scale();
    let global_mean = train_full.mean().unwrap_or((lo + hi) / 2.0);
    let mut sums = vec![(0.0, 0usize); train_full.n_users()];
    for r in train_full.ratings() {
        let s = &mut sums[r.user as usize];
        s.0 += r.value;
        s.1 += 1;
    }
    UserMeanPredictor {
        global_mean,
        user_means: sums
            .into_iter()
            .map(|(sum, n)| (n > 0).then(|| sum / n as f64))
            .collect(),
    }
}

/// Classic CF that ignores private ratings. An empty public set yields a
/// constant model at the scale midpoint.
pub fn only_public(partition: &PrivacyPartition, hp: &Hyperparams) -> Result<PublicModel> {
    public_or_midpoint(&partition.public, hp)
}

pub(crate) fn public_or_midpoint(public: &RatingsDataset, hp: &Hyperparams) -> Result<PublicModel> {
    if public.is_empty() {
        let (lo, hi) = public.scale();
        log::warn!("public rating set is empty; predicting the scale midpoint {}", (lo + hi) / 2.0);
        hp.validate()?;
        return Ok(constant_model((lo + hi) / 2.0, public.n_users(), public.n_items(), hp.k));
    }
    train_public(public, hp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DPConfig {
    /// Fictitious ratings added per item.
    pub beta_m: usize,
    /// Standard deviation of the noise added to each item average.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DPConfig {
    fn default() -> Self {
        DPConfig {
            beta_m: 15,
            noise_sigma: 0.5,
            seed: 0,
        }
    }
}

impl DPConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid("noise_sigma must be non-negative"));
        }
        Ok(())
    }
}

/// Noisy per-item averages, one per item, clamped to the rating scale.
/// Items nobody rated use the global mean.
pub fn noisy_item_averages(train_full: &RatingsDataset, cfg: &DPConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let (lo, hi) = train_full.scale();
    let global = train_full.mean().unwrap_or((lo + hi) / 2.0);
    let mut sums = vec![(0.0, 0usize); train_full.n_items()];
    for r in train_full.ratings() {
        let s = &mut sums[r.item as usize];
        s.0 += r.value;
        s.1 += 1;
    }
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(sums
        .iter()
        .enumerate()
        .map(|(i, &(sum, n))| {
            let mean = if n > 0 { sum / n as f64 } else { global };
            let eps = if cfg.noise_sigma > 0.0 {
                noise.sample(&mut rng::stream(cfg.seed, "dp-noise", i as u64))
            } else {
                0.0
            };
            (mean + eps).clamp(lo, hi)
        })
        .collect())
}

/// Training set plus `beta_m` synthetic users, each rating every item at its
/// noisy average.
pub fn dp_dataset(train_full: &RatingsDataset, cfg: &DPConfig) -> Result<RatingsDataset> {
    let averages = noisy_item_averages(train_full, cfg)?;
    let base = train_full.n_users() as UserId;
    let mut ratings = train_full.ratings().to_vec();
    ratings.reserve(cfg.beta_m * averages.len());
    for s in 0..cfg.beta_m as UserId {
        for (i, &v) in averages.iter().enumerate() {
            ratings.push(Rating::new(base + s, i as u32, v));
        }
    }
    Ok(train_full.with_extra_users(cfg.beta_m, ratings))
}

/// MF on real plus fictitious ratings. Synthetic users are dropped from the
/// returned model.
pub fn dp_baseline(train_full: &RatingsDataset, cfg: &DPConfig, hp: &Hyperparams) -> Result<PublicModel> {
    let augmented = dp_dataset(train_full, cfg)?;
    let mut model = train_public(&augmented, hp)?;
    let n = train_full.n_users();
    model.user_bias.truncate(n);
    model.user_vec = FactorMatrix::from_vec(n, hp.k, model.user_vec.as_slice()[..n * hp.k].to_vec())?;
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ObfuscationPolicy {
    /// Fixed number of random ratings from every peer.
    FR,
    /// Random ratings, as many as similarity allows.
    SR,
    /// As many as similarity allows, least-rated items first.
    SM,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Pearson,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObfuscationConfig {
    pub policy: ObfuscationPolicy,
    pub n_peers: usize,
    /// Ratings copied from each peer under FR.
    pub ratings_per_peer: usize,
    /// Largest fraction of a peer's ratings copied under SR and SM.
    pub max_fraction: f64,
    pub similarity: Similarity,
    pub seed: u64,
}

impl Default for ObfuscationConfig {
    fn default() -> Self {
        ObfuscationConfig {
            policy: ObfuscationPolicy::FR,
            n_peers: 10,
            ratings_per_peer: 10,
            max_fraction: 0.5,
            similarity: Similarity::Pearson,
            seed: 0,
        }
    }
}

impl ObfuscationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_peers < 1 {
            return Err(Error::invalid("n_peers must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.max_fraction) {
            return Err(Error::invalid("max_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Similarity over co-rated items. Pearson needs at least two co-rated items
/// and non-constant ratings; anything undefined is 0.
pub fn similarity(a: &HashMap<u32, f64>, b: &HashMap<u32, f64>, kind: Similarity) -> f64 {
    let mut pairs: Vec<(u32, f64, f64)> = a
        .iter()
        .filter_map(|(i, &x)| b.get(i).map(|&y| (*i, x, y)))
        .collect();
    pairs.sort_by_key(|p| p.0);
    match kind {
        Similarity::Pearson => {
            if pairs.len() < 2 {
                return 0.0;
            }
            let n = pairs.len() as f64;
            let ma = pairs.iter().map(|p| p.1).sum::<f64>() / n;
            let mb = pairs.iter().map(|p| p.2).sum::<f64>() / n;
            let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
            for &(_, x, y) in &pairs {
                sab += (x - ma) * (y - mb);
                saa += (x - ma) * (x - ma);
                sbb += (y - mb) * (y - mb);
            }
            if saa == 0.0 || sbb == 0.0 {
                0.0
            } else {
                sab / (saa.sqrt() * sbb.sqrt())
            }
        }
        Similarity::Cosine => {
            let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
            for &(_, x, y) in &pairs {
                sab += x * y;
                saa += x * x;
                sbb += y * y;
            }
            if saa == 0.0 || sbb == 0.0 {
                0.0
            } else {
                sab / (saa.sqrt() * sbb.sqrt())
            }
        }
    }
}

/// Peer ratings in the order SM considers them: ascending global rating
/// count, then item id.
pub fn least_rated_first(peer: &[Rating], item_counts: &[usize]) -> Vec<Rating> {
    let mut out = peer.to_vec();
    out.sort_by_key(|r| (item_counts[r.item as usize], r.item));
    out
}

/// Adds peer ratings to every user's profile according to `cfg`. Copied
/// ratings for items the user already rated, or already received from an
/// earlier peer, are dropped.
pub fn obfuscate(profiles: &RatingsDataset, cfg: &ObfuscationConfig) -> Result<RatingsDataset> {
    cfg.validate()?;
    let n_users = profiles.n_users();
    if cfg.n_peers > n_users.saturating_sub(1) {
        return Err(Error::invalid(format!(
            "n_peers = {} needs at least {} users, dataset has {n_users}",
            cfg.n_peers,
            cfg.n_peers + 1
        )));
    }
    let by_user = profiles.by_user();
    let maps: Vec<HashMap<u32, f64>> = by_user
        .iter()
        .map(|rs| rs.iter().map(|r| (r.item, r.value)).collect())
        .collect();
    let item_counts = profiles.item_counts();

    let mut out = profiles.ratings().to_vec();
    for u in 0..n_users {
        let mut rng = rng::stream(cfg.seed, "obfuscate", u as u64);
        let others: Vec<usize> = (0..n_users).filter(|&v| v != u).collect();
        let peers: Vec<usize> = others.choose_multiple(&mut rng, cfg.n_peers).copied().collect();
        let mut taken: HashSet<u32> = maps[u].keys().copied().collect();
        for peer in peers {
            let theirs = &by_user[peer];
            let chosen: Vec<Rating> = match cfg.policy {
                ObfuscationPolicy::FR => {
                    theirs.choose_multiple(&mut rng, cfg.ratings_per_peer).copied().collect()
                }
                ObfuscationPolicy::SR | ObfuscationPolicy::SM => {
                    let sim = similarity(&maps[u], &maps[peer], cfg.similarity).max(0.0);
                    let count = ((sim * cfg.max_fraction * theirs.len() as f64).round() as usize).min(theirs.len());
                    if cfg.policy == ObfuscationPolicy::SR {
                        theirs.choose_multiple(&mut rng, count).copied().collect()
                    } else {
                        let mut ordered = least_rated_first(theirs, &item_counts);
                        ordered.truncate(count);
                        ordered
                    }
                }
            };
            for r in chosen {
                if taken.insert(r.item) {
                    out.push(Rating::new(u as UserId, r.item, r.value));
                }
            }
        }
    }
    Ok(profiles.with_ratings(out))
}

/// MF trained on the obfuscated profiles.
pub fn obfuscation_baseline(
    train_full: &RatingsDataset,
    cfg: &ObfuscationConfig,
    hp: &Hyperparams,
) -> Result<PublicModel> {
    train_public(&obfuscate(train_full, cfg)?, hp)
}
