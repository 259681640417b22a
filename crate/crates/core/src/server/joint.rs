//! Joint training of the public model and a soft clustering of item factors.
//!
//! Item factors are never stored directly: item `i` is represented by a
//! non-negative weight vector `w_i` over `z` shared cluster centers, and the
//! prediction is `mu + b_u + b_i + w_i^T C^T p_u`. Weights are kept feasible by
//! projecting onto `w >= 0` after every update.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::{dot, FactorMatrix, Hyperparams, PublicModel, Rating, RatingsDataset};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    pub mu: f64,
    pub user_bias: Vec<f64>,
    pub user_vec: FactorMatrix,
    pub item_bias: Vec<f64>,
    /// `n_items x z`, all entries non-negative.
    pub item_weights: FactorMatrix,
    /// Cluster centers, one row per cluster: row `j` is column `C_j` of the
    /// `k x z` center matrix.
    pub centers: FactorMatrix,
}

impl JointModel {
    pub fn k(&self) -> usize {
        self.user_vec.dim()
    }

    pub fn n_clusters(&self) -> usize {
        self.centers.rows()
    }

    pub fn n_items(&self) -> usize {
        self.item_bias.len()
    }

    /// `C w_i` with every weight.
    pub fn item_factor(&self, item: usize) -> Vec<f64> {
        combine(&self.centers, self.item_weights.row(item))
    }

    pub fn predict(&self, user: usize, item: usize) -> f64 {
        self.mu + self.user_bias[user] + self.item_bias[item] + dot(&self.item_factor(item), self.user_vec.row(user))
    }

    /// The equivalent plain MF model with item factors `C w_i`.
    pub fn to_public_model(&self) -> PublicModel {
        let mut item_vec = FactorMatrix::zeros(self.n_items(), self.k());
        for i in 0..self.n_items() {
            item_vec.row_mut(i).copy_from_slice(&self.item_factor(i));
        }
        PublicModel {
            mu: self.mu,
            user_bias: self.user_bias.clone(),
            user_vec: self.user_vec.clone(),
            item_bias: self.item_bias.clone(),
            item_vec,
        }
    }

    pub fn weights_nonnegative(&self) -> bool {
        self.item_weights.as_slice().iter().all(|&w| w >= 0.0)
    }

    fn is_finite(&self) -> bool {
        [
            self.user_vec.as_slice(),
            self.item_weights.as_slice(),
            self.centers.as_slice(),
            &self.user_bias,
            &self.item_bias,
        ]
        .iter()
        .all(|s| s.iter().all(|x| x.is_finite()))
    }
}

/// `Σ_j w_j C_j`.
pub(crate) fn combine(centers: &FactorMatrix, weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; centers.dim()];
    for (j, &w) in weights.iter().enumerate() {
        if w != 0.0 {
            for (o, c) in out.iter_mut().zip(centers.row(j)) {
                *o += w * c;
            }
        }
    }
    out
}

/// Trains a [`JointModel`] with `n_clusters` centers.
///
/// Every parameter (biases, user vectors, weights, centers) starts from
/// `N(0, hp.init_std^2)`; initial weights are projected onto `w >= 0` like
/// every later iterate. Per rating, in order:
///
/// ```text
/// e    = r - (mu + b_u + b_i + w_i^T C^T p_u)
/// b_u += δ(e - λ b_u)
/// b_i += δ(e - λ b_i)
/// p_u += δ(e C w_i - λ p_u)
/// C   += δ(e p_u w_i^T - λ C)
/// w_i += δ(e C^T p_u - λ w_i);  w_i = max(w_i, 0)
/// ```
///
/// Each line sees the values written by the lines above it.
pub fn train_joint(public: &RatingsDataset, hp: &Hyperparams, n_clusters: usize) -> Result<JointModel> {
    hp.validate()?;
    if n_clusters < 1 {
        return Err(Error::invalid("joint model needs at least one cluster"));
    }
    let mu = public
        .mean()
        .ok_or_else(|| Error::invalid("cannot train a joint model on an empty rating set"))?;
    let mut model = init_joint(mu, public.n_users(), public.n_items(), hp, n_clusters);

    let ratings = public.ratings();
    let mut order: Vec<usize> = (0..ratings.len()).collect();
    let mut shuffle = rng::stream(hp.seed, "joint-epochs", 0);
    let mut scratch = JointScratch::new(hp.k, n_clusters);

    for epoch in 0..hp.epochs {
        order.shuffle(&mut shuffle);
        for &idx in &order {
            joint_step(&mut model, ratings[idx], hp.learning_rate, hp.regularization, &mut scratch);
            debug_assert!(model.item_weights.row(ratings[idx].item as usize).iter().all(|&w| w >= 0.0));
        }
        if !model.is_finite() {
            return Err(Error::Diverged {
                epoch,
                learning_rate: hp.learning_rate,
            });
        }
    }

    for (u, &n) in public.user_counts().iter().enumerate() {
        if n == 0 {
            model.user_bias[u] = 0.0;
            model.user_vec.row_mut(u).fill(0.0);
        }
    }
    for (i, &n) in public.item_counts().iter().enumerate() {
        if n == 0 {
            model.item_bias[i] = 0.0;
            model.item_weights.row_mut(i).fill(0.0);
        }
    }
    Ok(model)
}

pub(crate) fn init_joint(mu: f64, n_users: usize, n_items: usize, hp: &Hyperparams, z: usize) -> JointModel {
    let k = hp.k;
    let mut rng = rng::stream(hp.seed, "joint-init", 0);
    let std = hp.init_std;
    let user_bias = FactorMatrix::random_normal(1, n_users, std, &mut rng).as_slice().to_vec();
    let user_vec = FactorMatrix::random_normal(n_users, k, std, &mut rng);
    let item_bias = FactorMatrix::random_normal(1, n_items, std, &mut rng).as_slice().to_vec();
    let mut item_weights = FactorMatrix::random_normal(n_items, z, std, &mut rng);
    for w in item_weights.as_mut_slice() {
        *w = w.max(0.0);
    }
    let centers = FactorMatrix::random_normal(z, k, std, &mut rng);
    JointModel {
        mu,
        user_bias,
        user_vec,
        item_bias,
        item_weights,
        centers,
    }
}

pub(crate) struct JointScratch {
    q: Vec<f64>,
    ctp: Vec<f64>,
}

impl JointScratch {
    pub(crate) fn new(k: usize, z: usize) -> Self {
        JointScratch {
            q: vec![0.0; k],
            ctp: vec![0.0; z],
        }
    }
}

/// One PGD update on rating `r`: biases, then `p_u`, then `C` with the new
/// `p_u`, then `w_i` with the new `C` and `p_u`, projected onto `w >= 0`.
pub fn pgd_step(model: &mut JointModel, r: Rating, lr: f64, reg: f64) {
    let mut s = JointScratch::new(model.k(), model.n_clusters());
    joint_step(model, r, lr, reg, &mut s);
}

pub(crate) fn joint_step(model: &mut JointModel, r: Rating, lr: f64, reg: f64, s: &mut JointScratch) {
    let (u, i) = (r.user as usize, r.item as usize);
    let z = model.centers.rows();

    // q = C w_i
    s.q.fill(0.0);
    {
        let w = model.item_weights.row(i);
        for j in 0..z {
            if w[j] != 0.0 {
                for (q, c) in s.q.iter_mut().zip(model.centers.row(j)) {
                    *q += w[j] * c;
                }
            }
        }
    }
    let p = model.user_vec.row_mut(u);
    let err = r.value - (model.mu + model.user_bias[u] + model.item_bias[i] + dot(&s.q, p));

    model.user_bias[u] += lr * (err - reg * model.user_bias[u]);
    model.item_bias[i] += lr * (err - reg * model.item_bias[i]);
    for (pf, qf) in p.iter_mut().zip(&s.q) {
        *pf += lr * (err * qf - reg * *pf);
    }
    let p = model.user_vec.row(u);
    let w = model.item_weights.row(i);
    for j in 0..z {
        let wj = w[j];
        for (c, pf) in model.centers.row_mut(j).iter_mut().zip(p) {
            *c += lr * (err * wj * pf - reg * *c);
        }
    }
    for j in 0..z {
        s.ctp[j] = dot(model.centers.row(j), p);
    }
    for (wj, g) in model.item_weights.row_mut(i).iter_mut().zip(&s.ctp) {
        *wj += lr * (err * g - reg * *wj);
        *wj = wj.max(0.0);
    }
}

/// Top-`r` `(cluster, weight)` pairs of a weight vector, by descending weight
/// and then ascending cluster id.
pub fn top_r(weights: &[f64], r: usize) -> Vec<(u32, f64)> {
    let mut pairs: Vec<(u32, f64)> = weights.iter().enumerate().map(|(j, &w)| (j as u32, w)).collect();
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    pairs.truncate(r);
    pairs
}
