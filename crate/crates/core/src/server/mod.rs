//! The central recommender: public model training, item clustering, joint
//! training, aux payload assembly and top-N′ candidates.
//!
//! Nothing in this module accepts a [`PrivateModel`](crate::model::PrivateModel)
//! or a private rating.

pub mod aux;
pub mod bloom;
pub mod checkpoint;
mod codec;
pub mod joint;
pub mod kmeans;
pub mod sgd;
pub mod topn;

pub use aux::{
    aux_size_bytes, build_aux, naive_factor_bytes, reconstruct_item_factor, to_mib, AuxData, AuxManifest, AuxParams,
    AuxSource, AuxVariant, ClusterAux, JointAux, Membership, NaiveAux, SizeQuery,
};
pub use checkpoint::{decode_model, encode_model};
pub use joint::{pgd_step, top_r, train_joint, JointModel};
pub use kmeans::{kmeans_items, kmeans_points, ClusterModel, Clustering};
pub use sgd::{constant_model, public_step, train_public, train_public_observed};
pub use topn::{top_n_prime, Candidate, Server, ServerModel, TopNRequest, DEFAULT_N_PRIME_FACTOR};
