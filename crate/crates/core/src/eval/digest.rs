//! A fingerprint of everything the server holds.
//!
//! If two runs differ only in which ratings users kept private, the server
//! must end up in exactly the same state. Hashing a canonical serialization of
//! that state turns the claim into an equality check.

use sha2::{Digest, Sha256};

use crate::model::RatingsDataset;
use crate::server::checkpoint::encode_model;
use crate::server::topn::{Server, ServerModel};

fn put_ids(h: &mut Sha256, ids: &crate::model::IdMap) {
    h.update((ids.len() as u64).to_le_bytes());
    for d in 0..ids.len() as u32 {
        let raw = ids.raw(d).unwrap_or_default();
        h.update((raw.len() as u64).to_le_bytes());
        h.update(raw.as_bytes());
    }
}

fn put_dataset(h: &mut Sha256, ds: &RatingsDataset) {
    put_ids(h, ds.user_ids());
    put_ids(h, ds.item_ids());
    h.update(ds.scale().0.to_le_bytes());
    h.update(ds.scale().1.to_le_bytes());
    let mut ratings = ds.ratings().to_vec();
    ratings.sort_by_key(|r| (r.user, r.item));
    h.update((ratings.len() as u64).to_le_bytes());
    for r in ratings {
        h.update(r.user.to_le_bytes());
        h.update(r.item.to_le_bytes());
        h.update(r.value.to_le_bytes());
    }
}

/// SHA-256 (hex) over the public dataset, the trained model, the aux payload
/// and the sorted top-N′ request log.
pub fn privacy_digest(server: &Server) -> String {
    let mut h = Sha256::new();
    h.update(b"public");
    put_dataset(&mut h, server.public());
    h.update(b"model");
    match server.model() {
        ServerModel::Public(m) => h.update(encode_model(m)),
        ServerModel::Joint(j) => {
            h.update(encode_model(&j.to_public_model()));
            for x in j.item_weights.as_slice().iter().chain(j.centers.as_slice()) {
                h.update(x.to_le_bytes());
            }
        }
    }
    h.update(b"aux");
    h.update(server.broadcast());
    h.update(b"requests");
    let mut log = server.requests();
    log.sort_by_key(|r| (r.user, r.n_prime));
    for r in log {
        h.update(r.user.to_le_bytes());
        h.update((r.n_prime as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}
