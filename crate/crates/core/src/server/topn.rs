//! Server-side top-N′ candidate generation and the server state a device
//! interacts with.

use std::collections::HashSet;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::aux::AuxData;
use super::joint::JointModel;
use crate::error::{Error, Result};
use crate::model::{dot, ItemId, PublicModel, RatingsDataset, UserId};

/// Candidate list length as a multiple of the final list length.
pub const DEFAULT_N_PRIME_FACTOR: usize = 5;

/// An item ranked by the public model, shipped with its public factor so the
/// device can rescore it.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub item: ItemId,
    pub item_bias: f64,
    pub item_vec: Vec<f64>,
    pub score: f64,
}

/// Orders by descending score, then ascending item id.
pub(crate) fn rank_order(a: (f64, ItemId), b: (f64, ItemId)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Top `n_prime` items for `user` under the public model, skipping `exclude`.
pub fn top_n_prime(
    model: &PublicModel,
    user: UserId,
    n_prime: usize,
    exclude: &HashSet<ItemId>,
) -> Result<Vec<Candidate>> {
    if n_prime < 1 {
        return Err(Error::invalid("N' must be at least 1"));
    }
    let (b_u, p_u) = model.user_factor(user)?;
    let mut scored: Vec<(f64, ItemId)> = (0..model.n_items() as ItemId)
        .filter(|i| !exclude.contains(i))
        .map(|i| {
            let i_us = i as usize;
            (model.mu + b_u + model.item_bias[i_us] + dot(model.item_vec.row(i_us), p_u), i)
        })
        .collect();
    scored.sort_by(|&a, &b| rank_order(a, b));
    scored.truncate(n_prime);
    Ok(scored
        .into_iter()
        .map(|(score, item)| Candidate {
            item,
            item_bias: model.item_bias[item as usize],
            item_vec: model.item_vec.row(item as usize).to_vec(),
            score,
        })
        .collect())
}

/// A logged top-N′ request. Only the requesting user and the list length are
/// recorded; nothing else reaches the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopNRequest {
    pub user: UserId,
    pub n_prime: usize,
}

/// The model the server trained.
#[derive(Debug, Clone, PartialEq)]
pub enum ServerModel {
    Public(PublicModel),
    Joint(JointModel),
}

/// Everything the central recommender holds: public ratings, its trained
/// model, the broadcast aux payload and a log of top-N′ requests.
#[derive(Debug)]
pub struct Server {
    public: RatingsDataset,
    model: ServerModel,
    /// Plain MF view of `model`, used for user factors and ranking.
    scorer: PublicModel,
    aux: AuxData,
    broadcast: Vec<u8>,
    public_items: Vec<HashSet<ItemId>>,
    requests: Mutex<Vec<TopNRequest>>,
}

impl Server {
    pub fn new(public: RatingsDataset, model: ServerModel, aux: AuxData) -> Result<Self> {
        let scorer = match &model {
            ServerModel::Public(m) => m.clone(),
            ServerModel::Joint(j) => j.to_public_model(),
        };
        if scorer.n_users() != public.n_users() || scorer.n_items() != public.n_items() {
            return Err(Error::invalid("server model does not match the public dataset's id space"));
        }
        if aux.n_items() != public.n_items() || aux.k() != scorer.k() {
            return Err(Error::invalid("aux payload does not match the server model"));
        }
        let mut public_items = vec![HashSet::new(); public.n_users()];
        for r in public.ratings() {
            public_items[r.user as usize].insert(r.item);
        }
        let broadcast = aux.encode();
        Ok(Server {
            public,
            model,
            scorer,
            aux,
            broadcast,
            public_items,
            requests: Mutex::new(Vec::new()),
        })
    }

    pub fn public(&self) -> &RatingsDataset {
        &self.public
    }

    pub fn model(&self) -> &ServerModel {
        &self.model
    }

    pub fn scorer(&self) -> &PublicModel {
        &self.scorer
    }

    pub fn aux(&self) -> &AuxData {
        &self.aux
    }

    /// The bytes every device downloads; identical for all users.
    pub fn broadcast(&self) -> &[u8] {
        &self.broadcast
    }

    /// Public `(b_u, p_u)` for a user to download.
    pub fn user_factor(&self, user: UserId) -> Result<(f64, Vec<f64>)> {
        let (b, p) = self.scorer.user_factor(user)?;
        Ok((b, p.to_vec()))
    }

    /// Serves `n_prime` candidates ranked by the public model, excluding the
    /// items the user rated publicly. The request is logged.
    pub fn top_n_prime(&self, user: UserId, n_prime: usize) -> Result<Vec<Candidate>> {
        let exclude = self
            .public_items
            .get(user as usize)
            .ok_or(Error::UnknownUser(user))?;
        let out = top_n_prime(&self.scorer, user, n_prime, exclude)?;
        self.requests
            .lock()
            .expect("request log poisoned")
            .push(TopNRequest { user, n_prime });
        Ok(out)
    }

    /// Snapshot of the request log in arrival order.
    pub fn requests(&self) -> Vec<TopNRequest> {
        self.requests.lock().expect("request log poisoned").clone()
    }
}
