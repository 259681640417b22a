use crate::error::{Error, Result};
use crate::model::{FactorMatrix, Hyperparams, PublicModel, Rating, RatingsDataset};
use crate::rng;

use rand::seq::SliceRandom;

/// Biased MF by SGD over the public ratings.
///
/// `mu` is the mean of `public`; biases start at zero and latent vectors at
/// `N(0, init_std^2)`. Each epoch visits the ratings in a freshly seeded
/// shuffle and applies, with `e = r - r̂` and all right-hand sides evaluated
/// before any assignment,
///
/// ```text
/// b_u += δ(e - λ b_u)      p_u += δ(e q_i - λ p_u)
/// b_i += δ(e - λ b_i)      q_i += δ(e p_u - λ q_i)
/// ```
///
/// Users and items with no public rating end with zero vectors, so they score
/// as `mu` plus whatever biases are known.
pub fn train_public(public: &RatingsDataset, hp: &Hyperparams) -> Result<PublicModel> {
    train_public_observed(public, hp, |_, _| {})
}

/// [`train_public`] calling `observer(epoch, model)` after every epoch.
pub fn train_public_observed(
    public: &RatingsDataset,
    hp: &Hyperparams,
    mut observer: impl FnMut(usize, &PublicModel),
) -> Result<PublicModel> {
    hp.validate()?;
    let mu = public
        .mean()
        .ok_or_else(|| Error::invalid("cannot train a public model on an empty rating set"))?;
    let k = hp.k;
    let mut init = rng::stream(hp.seed, "public-init", 0);
    let user_vec = FactorMatrix::random_normal(public.n_users(), k, hp.init_std, &mut init);
    let item_vec = FactorMatrix::random_normal(public.n_items(), k, hp.init_std, &mut init);
    let mut model = PublicModel {
        mu,
        user_bias: vec![0.0; public.n_users()],
        user_vec,
        item_bias: vec![0.0; public.n_items()],
        item_vec,
    };

    let (lr, reg) = (hp.learning_rate, hp.regularization);
    let ratings = public.ratings();
    let mut order: Vec<usize> = (0..ratings.len()).collect();
    let mut shuffle = rng::stream(hp.seed, "public-epochs", 0);

    for epoch in 0..hp.epochs {
        order.shuffle(&mut shuffle);
        for &idx in &order {
            public_step(&mut model, ratings[idx], lr, reg);
        }
        if !model.is_finite() {
            return Err(Error::Diverged {
                epoch,
                learning_rate: lr,
            });
        }
        observer(epoch, &model);
    }

    zero_unseen(&mut model, public);
    Ok(model)
}

/// One SGD update on rating `r`, every parameter stepped from its
/// pre-update value.
pub fn public_step(model: &mut PublicModel, r: Rating, lr: f64, reg: f64) {
    let (u, i) = (r.user as usize, r.item as usize);
    let p = model.user_vec.row_mut(u);
    let q = model.item_vec.row_mut(i);
    let dot: f64 = p.iter().zip(q.iter()).map(|(a, b)| a * b).sum();
    let err = r.value - (model.mu + model.user_bias[u] + model.item_bias[i] + dot);

    model.user_bias[u] += lr * (err - reg * model.user_bias[u]);
    model.item_bias[i] += lr * (err - reg * model.item_bias[i]);
    for (pf, qf) in p.iter_mut().zip(q.iter_mut()) {
        let (pu, qi) = (*pf, *qf);
        *pf += lr * (err * qi - reg * pu);
        *qf += lr * (err * pu - reg * qi);
    }
}

fn zero_unseen(model: &mut PublicModel, public: &RatingsDataset) {
    for (u, &n) in public.user_counts().iter().enumerate() {
        if n == 0 {
            model.user_vec.row_mut(u).fill(0.0);
            model.user_bias[u] = 0.0;
        }
    }
    for (i, &n) in public.item_counts().iter().enumerate() {
        if n == 0 {
            model.item_vec.row_mut(i).fill(0.0);
            model.item_bias[i] = 0.0;
        }
    }
}

/// Model predicting `mu` for everything; used when there is nothing to train on.
pub fn constant_model(mu: f64, n_users: usize, n_items: usize, k: usize) -> PublicModel {
    PublicModel {
        mu,
        user_bias: vec![0.0; n_users],
        user_vec: FactorMatrix::zeros(n_users, k),
        item_bias: vec![0.0; n_items],
        item_vec: FactorMatrix::zeros(n_items, k),
    }
}
