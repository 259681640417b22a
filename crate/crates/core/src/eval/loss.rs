//! The per-user objective of the multi-objective formulation, as a
//! diagnostic.

use crate::error::Result;
use crate::model::{l2_loss, PublicModel, Rating, RatingsDataset};

/// `f_v`: squared error over the user's private ratings under
/// `private_predict`, plus `1/n` of the regularised public loss under the
/// public model (regulariser inside the sum, as in [`l2_loss`]).
pub fn user_loss_fv(
    private: &[Rating],
    mut private_predict: impl FnMut(&Rating) -> Result<f64>,
    public: &RatingsDataset,
    public_model: &PublicModel,
    lambda: f64,
    n_users: usize,
) -> Result<f64> {
    let mut private_sq = 0.0;
    for r in private {
        let e = r.value - private_predict(r)?;
        private_sq += e * e;
    }
    let public_part = if public.is_empty() {
        0.0
    } else {
        l2_loss(public_model, public, lambda)? / n_users as f64
    };
    Ok(private_sq + public_part)
}
