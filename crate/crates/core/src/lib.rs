//! Selective privacy-preserving collaborative filtering.
//!
//! Each user marks every rating public or private. The server trains a
//! biased matrix-factorisation model on public ratings only and broadcasts an
//! auxiliary payload; each device then fine-tunes its own user factor on its
//! private ratings without sending anything back.
//!
//! Modules follow that split: [`server`] never sees private data, [`device`]
//! never exports it, and [`eval`] checks both claims along with accuracy.

pub mod baselines;
pub mod device;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod privacy;
pub mod rng;
pub mod server;

pub use error::{Error, Result};
pub use model::{
    predict, l2_loss, FactorMatrix, Hyperparams, IdMap, ItemId, PrivateModel, PublicModel, Rating, RatingsDataset,
    UserId,
};
