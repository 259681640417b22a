//! On-device fine-tuning and local ranking.
//!
//! A device starts from its public user factor, downloads the broadcast aux
//! payload and runs SGD over its own private ratings. Only `b_u*` and `p_u*`
//! are kept as the result; the shared parameters it perturbs along the way
//! are session-local copies. Nothing here is sent back to the server: the
//! public surface returns recommendation lists and predictions only.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::{dot, Hyperparams, ItemId, LocalShared, PrivateModel, Rating, UserId};
use crate::rng;
use crate::server::aux::{reconstruct_item_factor, sha256_hex, AuxData, ClusterAux, JointAux, NaiveAux};
use crate::server::topn::{rank_order, Candidate};

/// How a device scores items after clustering-based fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterScoring {
    /// The device's local centroid copies, the only item view it holds.
    #[default]
    Centroids,
    /// Exact public item factors, as delivered with top-N′ candidates.
    PublicFactors,
}

/// Inputs to one device's fine-tuning session.
#[derive(Debug, Clone)]
pub struct DeviceContext<'a> {
    user: UserId,
    user_bias: f64,
    user_vec: Vec<f64>,
    aux: &'a AuxData,
    private_ratings: Vec<Rating>,
    hp: Hyperparams,
}

impl<'a> DeviceContext<'a> {
    /// `private_ratings` must all belong to `user`; they are sorted by item so
    /// the traversal does not depend on the order they were supplied in.
    pub fn new(
        user: UserId,
        public_factor: (f64, Vec<f64>),
        aux: &'a AuxData,
        mut private_ratings: Vec<Rating>,
        hp: Hyperparams,
    ) -> Result<Self> {
        hp.validate()?;
        if let Some(r) = private_ratings.iter().find(|r| r.user != user) {
            return Err(Error::invalid(format!(
                "private rating of user {} given to the device of user {user}",
                r.user
            )));
        }
        if public_factor.1.len() != aux.k() {
            return Err(Error::DimensionMismatch {
                expected: aux.k(),
                actual: public_factor.1.len(),
            });
        }
        if let Some(r) = private_ratings.iter().find(|r| r.item as usize >= aux.n_items()) {
            return Err(Error::UnknownItem(r.item));
        }
        private_ratings.sort_by_key(|r| r.item);
        Ok(DeviceContext {
            user,
            user_bias: public_factor.0,
            user_vec: public_factor.1,
            aux,
            private_ratings,
            hp,
        })
    }

    /// Checks a downloaded payload against the checksum the server published
    /// before trusting it.
    pub fn verify_broadcast(bytes: &[u8], expected_sha256: &str) -> Result<AuxData> {
        let actual = sha256_hex(bytes);
        if actual != expected_sha256 {
            return Err(Error::Decode(format!(
                "aux checksum mismatch: expected {expected_sha256}, got {actual}"
            )));
        }
        AuxData::decode(bytes)
    }

    pub fn user(&self) -> UserId {
        self.user
    }

    pub fn aux(&self) -> &AuxData {
        self.aux
    }

    pub fn private_ratings(&self) -> &[Rating] {
        &self.private_ratings
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }
}

/// Per-rating view of a shared parameter during fine-tuning.
struct Slot {
    key: u32,
    divisor: f64,
}

/// SGD over the private ratings. `slots[j]` names the shared parameter that
/// rating `j` reads and writes; its update is divided by `divisor`.
///
/// ```text
/// e    = r - (mu + b_u* + b + q . p_u*)
/// b_u* += δ(e - λ b_u*)
/// b    += δ(e - λ b) / N
/// p_u* += δ(e q - λ p_u*)
/// q    += δ(e p_u* - λ q) / N
/// ```
///
/// Each line sees the values written by the lines above it.
fn fine_tune(
    ctx: &DeviceContext<'_>,
    slots: &[Slot],
    mut shared: BTreeMap<u32, (f64, Vec<f64>)>,
) -> (f64, Vec<f64>, BTreeMap<u32, (f64, Vec<f64>)>) {
    let DeviceContext {
        user,
        user_bias,
        user_vec,
        aux,
        private_ratings,
        hp,
    } = ctx;
    let (lr, reg, mu) = (hp.learning_rate, hp.regularization, aux.mu());
    let mut b_u = *user_bias;
    let mut p_u = user_vec.clone();
    let mut order: Vec<usize> = (0..private_ratings.len()).collect();
    let mut shuffle = rng::stream(hp.seed, "device-epochs", u64::from(*user));

    for _ in 0..hp.epochs {
        order.shuffle(&mut shuffle);
        for &j in &order {
            let Slot { key, divisor } = slots[j];
            let (b, q) = shared.get_mut(&key).expect("slot initialised");
            let e = private_ratings[j].value - (mu + b_u + *b + dot(q, &p_u));
            b_u += lr * (e - reg * b_u);
            *b += lr * (e - reg * *b) / divisor;
            for (pf, qf) in p_u.iter_mut().zip(q.iter()) {
                *pf += lr * (e * qf - reg * *pf);
            }
            for (qf, pf) in q.iter_mut().zip(&p_u) {
                *qf += lr * (e * pf - reg * *qf) / divisor;
            }
        }
    }
    (b_u, p_u, shared)
}

fn naive_aux<'a>(aux: &'a AuxData) -> Result<&'a NaiveAux> {
    match aux {
        AuxData::Naive(a) => Ok(a),
        other => Err(Error::VariantMismatch {
            expected: "naive",
            actual: other.variant().name(),
        }),
    }
}

fn cluster_aux<'a>(aux: &'a AuxData) -> Result<&'a ClusterAux> {
    match aux {
        AuxData::Cluster(a) => Ok(a),
        other => Err(Error::VariantMismatch {
            expected: "cluster",
            actual: other.variant().name(),
        }),
    }
}

fn joint_aux<'a>(aux: &'a AuxData) -> Result<&'a JointAux> {
    match aux {
        AuxData::Joint(a) => Ok(a),
        other => Err(Error::VariantMismatch {
            expected: "joint",
            actual: other.variant().name(),
        }),
    }
}

/// Fine-tuning with every item factor available.
pub fn train_private_naive(ctx: &DeviceContext<'_>) -> Result<PrivateModel> {
    let aux = naive_aux(ctx.aux)?;
    let mut shared = BTreeMap::new();
    for r in &ctx.private_ratings {
        let i = r.item as usize;
        shared.insert(r.item, (aux.item_bias[i], aux.item_vec.row(i).to_vec()));
    }
    Ok(item_keyed(ctx, shared))
}

/// Fine-tuning against cluster centroids; centroid updates are divided by the
/// cluster's item count.
pub fn train_private_cluster(ctx: &DeviceContext<'_>) -> Result<PrivateModel> {
    let aux = cluster_aux(ctx.aux)?;
    let mut shared = BTreeMap::new();
    let mut slots = Vec::with_capacity(ctx.private_ratings.len());
    for r in &ctx.private_ratings {
        let c = aux.cluster_of(r.item)?;
        let n_c = aux.counts[c as usize];
        if n_c == 0 {
            return Err(Error::MissingMembership(r.item));
        }
        shared
            .entry(c)
            .or_insert_with(|| (aux.centroid_bias[c as usize], aux.centroid_vec.row(c as usize).to_vec()));
        slots.push(Slot {
            key: c,
            divisor: f64::from(n_c),
        });
    }
    let (b_u, p_u, shared) = fine_tune(ctx, &slots, shared);
    Ok(PrivateModel {
        user: ctx.user,
        user_bias_star: b_u,
        user_vec_star: p_u,
        local_shared: LocalShared::Centroids(shared),
    })
}

/// Fine-tuning on item factors reconstructed from the top-R cluster weights.
pub fn train_private_joint(ctx: &DeviceContext<'_>) -> Result<PrivateModel> {
    let aux = joint_aux(ctx.aux)?;
    let mut shared = BTreeMap::new();
    for r in &ctx.private_ratings {
        shared.insert(r.item, reconstruct_item_factor(aux, r.item)?);
    }
    Ok(item_keyed(ctx, shared))
}

/// Dispatches on the aux variant.
pub fn train_private(ctx: &DeviceContext<'_>) -> Result<PrivateModel> {
    match ctx.aux {
        AuxData::Naive(_) => train_private_naive(ctx),
        AuxData::Cluster(_) => train_private_cluster(ctx),
        AuxData::Joint(_) => train_private_joint(ctx),
    }
}

fn item_keyed(ctx: &DeviceContext<'_>, shared: BTreeMap<u32, (f64, Vec<f64>)>) -> PrivateModel {
    let slots: Vec<Slot> = ctx
        .private_ratings
        .iter()
        .map(|r| Slot {
            key: r.item,
            divisor: 1.0,
        })
        .collect();
    let (b_u, p_u, shared) = fine_tune(ctx, &slots, shared);
    PrivateModel {
        user: ctx.user,
        user_bias_star: b_u,
        user_vec_star: p_u,
        local_shared: LocalShared::Items(shared),
    }
}

/// A finished device session: the private model plus the aux it was tuned
/// against, able to score items locally.
#[derive(Debug, Clone)]
pub struct Device<'a> {
    aux: &'a AuxData,
    model: PrivateModel,
}

impl<'a> Device<'a> {
    pub fn train(ctx: &DeviceContext<'a>) -> Result<Self> {
        Ok(Device {
            aux: ctx.aux,
            model: train_private(ctx)?,
        })
    }

    pub fn private_model(&self) -> &PrivateModel {
        &self.model
    }

    /// The device's own `(b_i, q_i)` for `item`: its local copy if fine-tuning
    /// touched it, otherwise whatever the aux payload gives.
    pub fn local_item_factor(&self, item: ItemId) -> Result<(f64, Vec<f64>)> {
        match &self.model.local_shared {
            LocalShared::Items(m) => match m.get(&item) {
                Some(f) => Ok(f.clone()),
                None => self.aux.item_factor(item),
            },
            LocalShared::Centroids(m) => {
                let AuxData::Cluster(aux) = self.aux else {
                    unreachable!("centroid overrides only come from cluster aux")
                };
                let c = aux.cluster_of(item)?;
                match m.get(&c) {
                    Some(f) => Ok(f.clone()),
                    None => self.aux.item_factor(item),
                }
            }
        }
    }

    /// Predicted rating of `item` from the device's local view.
    pub fn predict(&self, item: ItemId) -> Result<f64> {
        let (b_i, q_i) = self.local_item_factor(item)?;
        Ok(self.predict_with(b_i, &q_i))
    }

    /// Predicted rating given an item factor supplied from outside, e.g. one
    /// that arrived with a top-N′ candidate.
    pub fn predict_with(&self, item_bias: f64, item_vec: &[f64]) -> f64 {
        self.aux.mu() + self.model.user_bias_star + item_bias + dot(item_vec, &self.model.user_vec_star)
    }

    /// Evaluation prediction for a held-out item. Naive and joint devices use
    /// their local item view; cluster devices follow `scoring`, where
    /// `public_item` is the server's factor for that item.
    pub fn predict_for_eval(
        &self,
        item: ItemId,
        scoring: ClusterScoring,
        public_item: impl FnOnce() -> Result<(f64, Vec<f64>)>,
    ) -> Result<f64> {
        match (self.aux, scoring) {
            (AuxData::Cluster(_), ClusterScoring::PublicFactors) => {
                let (b, q) = public_item()?;
                Ok(self.predict_with(b, &q))
            }
            _ => self.predict(item),
        }
    }

    /// Top `n` items by local score, skipping `exclude`. Needs full item
    /// coverage, so cluster aux is rejected (use [`rerank_top_n`] instead).
    pub fn local_top_n(&self, n: usize, exclude: &HashSet<ItemId>) -> Result<Vec<ItemId>> {
        local_top_n(self, n, exclude)
    }
}

/// Top `n` non-excluded items under the device's local scorer, ties to the
/// lower item id.
pub fn local_top_n(device: &Device<'_>, n: usize, exclude: &HashSet<ItemId>) -> Result<Vec<ItemId>> {
    if n < 1 {
        return Err(Error::invalid("N must be at least 1"));
    }
    if let AuxData::Cluster(_) = device.aux {
        return Err(Error::VariantMismatch {
            expected: "naive or joint",
            actual: "cluster",
        });
    }
    let mut scored = Vec::with_capacity(device.aux.n_items());
    for item in 0..device.aux.n_items() as ItemId {
        if !exclude.contains(&item) {
            scored.push((device.predict(item)?, item));
        }
    }
    scored.sort_by(|&a, &b| rank_order(a, b));
    Ok(scored.into_iter().take(n).map(|(_, i)| i).collect())
}

/// Rescores server candidates with the private user factor and keeps the top
/// `n`, ties to the lower item id.
pub fn rerank_top_n(candidates: &[Candidate], model: &PrivateModel, n: usize) -> Result<Vec<ItemId>> {
    if n < 1 {
        return Err(Error::invalid("N must be at least 1"));
    }
    if n > candidates.len() {
        return Err(Error::invalid(format!(
            "N = {n} exceeds the {} candidates received (N' must be at least N)",
            candidates.len()
        )));
    }
    let mut scored: Vec<(f64, ItemId)> = candidates
        .iter()
        .map(|c| {
            (
                model.user_bias_star + c.item_bias + dot(&c.item_vec, &model.user_vec_star),
                c.item,
            )
        })
        .collect();
    scored.sort_by(|&a, &b| rank_order(a, b));
    Ok(scored.into_iter().take(n).map(|(_, i)| i).collect())
}
