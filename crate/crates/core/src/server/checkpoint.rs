//! Binary checkpoints of a trained [`PublicModel`].

use crate::error::Result;
use crate::model::{FactorMatrix, PublicModel};

use super::codec::{Reader, Writer};

const MODEL_MAGIC: &[u8; 8] = b"SP2MODEL";

pub fn encode_model(model: &PublicModel) -> Vec<u8> {
    let mut w = Writer::new(MODEL_MAGIC);
    w.section(0, |s| {
        s.u32(model.k() as u32)
            .u32(model.n_users() as u32)
            .u32(model.n_items() as u32)
            .f64(model.mu);
    });
    w.section(1, |s| {
        s.f64s(&model.user_bias);
    });
    w.section(2, |s| {
        s.f64s(model.user_vec.as_slice());
    });
    w.section(3, |s| {
        s.f64s(&model.item_bias);
    });
    w.section(4, |s| {
        s.f64s(model.item_vec.as_slice());
    });
    w.finish()
}

pub fn decode_model(bytes: &[u8]) -> Result<PublicModel> {
    let mut r = Reader::new(bytes, MODEL_MAGIC)?;
    let mut h = r.section(0)?;
    let k = h.u32()? as usize;
    let n_users = h.u32()? as usize;
    let n_items = h.u32()? as usize;
    let mu = h.f64()?;
    h.end()?;
    let mut read = |tag, n| -> Result<Vec<f64>> {
        let mut s = r.section(tag)?;
        let v = s.f64s(n)?;
        s.end()?;
        Ok(v)
    };
    let user_bias = read(1, n_users)?;
    let user_vec = FactorMatrix::from_vec(n_users, k, read(2, n_users * k)?)?;
    let item_bias = read(3, n_items)?;
    let item_vec = FactorMatrix::from_vec(n_items, k, read(4, n_items * k)?)?;
    r.finish()?;
    Ok(PublicModel {
        mu,
        user_bias,
        user_vec,
        item_bias,
        item_vec,
    })
}
