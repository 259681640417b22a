//! Rating data and factor-model primitives shared by every training routine.
//!
//! A rating prediction for user `u` on item `i` is
//! `mu + b_u + b_i + q_i . p_u`. Biases are kept as separate scalars rather
//! than folded into augmented vectors, and predictions are never clamped here.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type UserId = u32;
pub type ItemId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub user: UserId,
    pub item: ItemId,
    pub value: f64,
}

impl Rating {
    pub fn new(user: UserId, item: ItemId, value: f64) -> Self {
        Rating { user, item, value }
    }
}

/// Bidirectional map between raw ids as they appear in a file and dense ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    to_dense: HashMap<String, u32>,
    to_raw: Vec<String>,
}

impl IdMap {
    /// Dense ids `0..n` whose raw form is their decimal representation.
    pub fn identity(n: usize) -> Self {
        let mut map = IdMap::default();
        for i in 0..n {
            map.intern(&i.to_string());
        }
        map
    }

    /// Returns the dense id for `raw`, assigning the next one on first sight.
    pub fn intern(&mut self, raw: &str) -> u32 {
        if let Some(&id) = self.to_dense.get(raw) {
            return id;
        }
        let id = self.to_raw.len() as u32;
        self.to_raw.push(raw.to_owned());
        self.to_dense.insert(raw.to_owned(), id);
        id
    }

    pub fn dense(&self, raw: &str) -> Option<u32> {
        self.to_dense.get(raw).copied()
    }

    pub fn raw(&self, dense: u32) -> Option<&str> {
        self.to_raw.get(dense as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.to_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_raw.is_empty()
    }

    pub fn is_bijection(&self) -> bool {
        self.to_dense.len() == self.to_raw.len()
            && self
                .to_raw
                .iter()
                .enumerate()
                .all(|(i, raw)| self.to_dense.get(raw) == Some(&(i as u32)))
    }
}

/// An observed ratings set. Subsets (folds, partitions) share the id space of
/// the dataset they were cut from, so `n_users`/`n_items` count every id that
/// exists, not only the ones present in `ratings`.
#[derive(Debug, Clone)]
pub struct RatingsDataset {
    ratings: Vec<Rating>,
    n_users: usize,
    n_items: usize,
    scale: (f64, f64),
    user_ids: Arc<IdMap>,
    item_ids: Arc<IdMap>,
}

impl RatingsDataset {
    pub fn new(
        ratings: Vec<Rating>,
        scale: (f64, f64),
        user_ids: Arc<IdMap>,
        item_ids: Arc<IdMap>,
    ) -> Result<Self> {
        let ds = RatingsDataset {
            n_users: user_ids.len(),
            n_items: item_ids.len(),
            ratings,
            scale,
            user_ids,
            item_ids,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Dataset over dense ids `0..n_users` and `0..n_items`.
    pub fn from_triples(
        n_users: usize,
        n_items: usize,
        scale: (f64, f64),
        triples: &[(u32, u32, f64)],
    ) -> Result<Self> {
        let ratings = triples
            .iter()
            .map(|&(u, i, r)| Rating::new(u, i, r))
            .collect();
        Self::new(
            ratings,
            scale,
            Arc::new(IdMap::identity(n_users)),
            Arc::new(IdMap::identity(n_items)),
        )
    }

    /// A dataset over the same id space holding `ratings`.
    pub fn with_ratings(&self, ratings: Vec<Rating>) -> Self {
        RatingsDataset {
            ratings,
            n_users: self.n_users,
            n_items: self.n_items,
            scale: self.scale,
            user_ids: Arc::clone(&self.user_ids),
            item_ids: Arc::clone(&self.item_ids),
        }
    }

    /// Same ratings, id space grown by `extra_users` synthetic users.
    pub(crate) fn with_extra_users(&self, extra_users: usize, ratings: Vec<Rating>) -> Self {
        let mut users = (*self.user_ids).clone();
        let base = users.len();
        for n in 0..extra_users {
            users.intern(&format!("#synthetic-{}", base + n));
        }
        RatingsDataset {
            ratings,
            n_users: users.len(),
            n_items: self.n_items,
            scale: self.scale,
            user_ids: Arc::new(users),
            item_ids: Arc::clone(&self.item_ids),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.user_ids.len() != self.n_users || self.item_ids.len() != self.n_items {
            return Err(Error::invalid("id maps disagree with entity counts"));
        }
        let (lo, hi) = self.scale;
        if !(lo <= hi) {
            return Err(Error::invalid(format!("rating scale ({lo}, {hi}) is empty")));
        }
        let mut seen = std::collections::HashSet::with_capacity(self.ratings.len());
        for r in &self.ratings {
            if r.user as usize >= self.n_users {
                return Err(Error::UnknownUser(r.user));
            }
            if r.item as usize >= self.n_items {
                return Err(Error::UnknownItem(r.item));
            }
            if !(r.value >= lo && r.value <= hi) {
                return Err(Error::invalid(format!(
                    "rating {} outside scale [{lo}, {hi}]",
                    r.value
                )));
            }
            if !seen.insert((r.user, r.item)) {
                return Err(Error::invalid(format!(
                    "duplicate rating for user {} item {}",
                    r.user, r.item
                )));
            }
        }
        Ok(())
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    pub fn into_ratings(self) -> Vec<Rating> {
        self.ratings
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn scale(&self) -> (f64, f64) {
        self.scale
    }

    pub fn user_ids(&self) -> &IdMap {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &IdMap {
        &self.item_ids
    }

    /// Arithmetic mean of the rating values, `None` when empty.
    pub fn mean(&self) -> Option<f64> {
        if self.ratings.is_empty() {
            None
        } else {
            Some(self.ratings.iter().map(|r| r.value).sum::<f64>() / self.ratings.len() as f64)
        }
    }

    /// Ratings grouped per user, in dataset order.
    pub fn by_user(&self) -> Vec<Vec<Rating>> {
        let mut out = vec![Vec::new(); self.n_users];
        for r in &self.ratings {
            out[r.user as usize].push(*r);
        }
        out
    }

    /// Number of ratings per item.
    pub fn item_counts(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_items];
        for r in &self.ratings {
            out[r.item as usize] += 1;
        }
        out
    }

    pub fn user_counts(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_users];
        for r in &self.ratings {
            out[r.user as usize] += 1;
        }
        out
    }
}

/// Training hyperparameters. Defaults: `k = 100`, 20 epochs, learning rate
/// 0.005, regularization 0.02, vectors initialised from `N(0, 0.1^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub k: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Standard deviation of the normal initialisation of latent vectors.
    pub init_std: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            k: 100,
            learning_rate: 0.005,
            regularization: 0.02,
            epochs: 20,
            seed: 0,
            init_std: 0.1,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.regularization >= 0.0) || !self.regularization.is_finite() {
            return Err(Error::invalid("regularization must be non-negative"));
        }
        if !(self.init_std >= 0.0) || !self.init_std.is_finite() {
            return Err(Error::invalid("init_std must be non-negative"));
        }
        Ok(())
    }
}

/// Row-major `rows x dim` matrix of latent vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl FactorMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        FactorMatrix {
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_vec(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::DimensionMismatch {
                expected: rows * dim,
                actual: data.len(),
            });
        }
        Ok(FactorMatrix { dim, data })
    }

    pub fn random_normal<R: Rng>(rows: usize, dim: usize, std: f64, rng: &mut R) -> Self {
        let mut m = Self::zeros(rows, dim);
        if std > 0.0 {
            let normal = Normal::new(0.0, std).expect("finite std");
            for x in &mut m.data {
                *x = normal.sample(rng);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn squared_norm(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Estimated rating `mu + b_u + b_i + q_i . p_u`.
pub fn predict(mu: f64, b_u: f64, b_i: f64, p_u: &[f64], q_i: &[f64]) -> Result<f64> {
    if p_u.len() != q_i.len() {
        return Err(Error::DimensionMismatch {
            expected: p_u.len(),
            actual: q_i.len(),
        });
    }
    Ok(mu + b_u + b_i + dot(q_i, p_u))
}

/// Biased matrix-factorisation model fit on public ratings.
#[derive(Debug, Clone, PartialEq)]
pub struct PublicModel {
    pub mu: f64,
    pub user_bias: Vec<f64>,
    pub user_vec: FactorMatrix,
    pub item_bias: Vec<f64>,
    pub item_vec: FactorMatrix,
}

impl PublicModel {
    pub fn k(&self) -> usize {
        self.user_vec.dim()
    }

    pub fn n_users(&self) -> usize {
        self.user_bias.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_bias.len()
    }

    pub fn user_factor(&self, user: UserId) -> Result<(f64, &[f64])> {
        let u = user as usize;
        if u >= self.n_users() {
            return Err(Error::UnknownUser(user));
        }
        Ok((self.user_bias[u], self.user_vec.row(u)))
    }

    pub fn item_factor(&self, item: ItemId) -> Result<(f64, &[f64])> {
        let i = item as usize;
        if i >= self.n_items() {
            return Err(Error::UnknownItem(item));
        }
        Ok((self.item_bias[i], self.item_vec.row(i)))
    }

    pub fn predict(&self, user: UserId, item: ItemId) -> Result<f64> {
        let (b_u, p_u) = self.user_factor(user)?;
        let (b_i, q_i) = self.item_factor(item)?;
        predict(self.mu, b_u, b_i, p_u, q_i)
    }

    pub fn is_finite(&self) -> bool {
        self.mu.is_finite()
            && self.user_bias.iter().all(|x| x.is_finite())
            && self.item_bias.iter().all(|x| x.is_finite())
            && self.user_vec.as_slice().iter().all(|x| x.is_finite())
            && self.item_vec.as_slice().iter().all(|x| x.is_finite())
    }
}

/// Regularised squared error summed over `ratings`, with the regulariser
/// applied once per observed rating (inside the sum).
pub fn l2_loss(model: &PublicModel, ratings: &RatingsDataset, lambda: f64) -> Result<f64> {
    let mut total = 0.0;
    for r in ratings.ratings() {
        let (b_u, p_u) = model.user_factor(r.user)?;
        let (b_i, q_i) = model.item_factor(r.item)?;
        let err = r.value - predict(model.mu, b_u, b_i, p_u, q_i)?;
        total += err * err
            + lambda * (b_i * b_i + b_u * b_u + squared_norm(q_i) + squared_norm(p_u));
    }
    Ok(total)
}

/// A user's on-device fine-tuned factor plus the device-local copies of the
/// shared parameters that fine-tuning touched.
///
/// Lives only on the device: it has no serialization and no server entry
/// point accepts it.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivateModel {
    pub(crate) user: UserId,
    pub(crate) user_bias_star: f64,
    pub(crate) user_vec_star: Vec<f64>,
    pub(crate) local_shared: LocalShared,
}

/// Device-local overrides of shared parameters, keyed by item id (naive and
/// joint) or by cluster id (clustering).
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LocalShared {
    Items(std::collections::BTreeMap<ItemId, (f64, Vec<f64>)>),
    Centroids(std::collections::BTreeMap<u32, (f64, Vec<f64>)>),
}

impl PrivateModel {
    pub fn user(&self) -> UserId {
        self.user
    }

    pub fn user_bias(&self) -> f64 {
        self.user_bias_star
    }

    pub fn user_vec(&self) -> &[f64] {
        &self.user_vec_star
    }

    pub fn k(&self) -> usize {
        self.user_vec_star.len()
    }
}
