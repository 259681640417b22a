//! Auxiliary public model data: the payload broadcast identically to every
//! device so it can fine-tune locally.
//!
//! Three encodings exist. `Naive` ships every item factor. `Cluster` ships
//! K centroids plus item-to-cluster membership, either as a plain id array or
//! as one bloom filter per cluster. `Joint` ships the center matrix `C`, every
//! item bias, and each item's top-R `(cluster, weight)` pairs. None of them
//! carries a user factor or a rating value.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bloom::{self, BloomFilter, BITS_PER_ITEM_1PCT};
use super::codec::{Reader, Writer};
use super::joint::{combine, top_r, JointModel};
use super::kmeans::{kmeans_items, ClusterModel};
use crate::error::{Error, Result};
use crate::model::{FactorMatrix, ItemId, PublicModel};

const AUX_MAGIC: &[u8; 8] = b"SP2AUX01";
pub const BLOOM_FP_RATE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxVariant {
    Naive,
    Cluster,
    Joint,
}

impl AuxVariant {
    pub fn name(self) -> &'static str {
        match self {
            AuxVariant::Naive => "naive",
            AuxVariant::Cluster => "cluster",
            AuxVariant::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveAux {
    pub mu: f64,
    pub item_bias: Vec<f64>,
    pub item_vec: FactorMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Membership {
    Plain(Vec<u32>),
    Bloom {
        filters: Vec<BloomFilter>,
        /// SHA-256 of the exact membership array, so a device can tell whether
        /// its lowest-id resolution reproduced it.
        checksum: [u8; 32],
        /// Items whose lowest-id match is not their true cluster.
        misresolved: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAux {
    pub mu: f64,
    pub n_items: u32,
    pub centroid_bias: Vec<f64>,
    pub centroid_vec: FactorMatrix,
    pub counts: Vec<u32>,
    pub membership: Membership,
}

impl ClusterAux {
    /// Cluster of `item`; bloom membership resolves multiple matches to the
    /// lowest cluster id.
    pub fn cluster_of(&self, item: ItemId) -> Result<u32> {
        if item >= self.n_items {
            return Err(Error::UnknownItem(item));
        }
        match &self.membership {
            Membership::Plain(m) => Ok(m[item as usize]),
            Membership::Bloom { filters, .. } => {
                let (found, hits) = bloom::lookup(filters, item);
                if hits > 1 {
                    log::debug!("item {item} matches {hits} cluster filters");
                }
                found.ok_or(Error::MissingMembership(item))
            }
        }
    }

    /// Membership as the device resolves it, for every item.
    pub fn resolved_membership(&self) -> Result<Vec<u32>> {
        (0..self.n_items).map(|i| self.cluster_of(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointAux {
    pub mu: f64,
    /// One row per cluster center.
    pub centers: FactorMatrix,
    pub item_bias: Vec<f64>,
    pub top_r: usize,
    /// `n_items x top_r` cluster ids, descending by weight per item.
    pub top_ids: Vec<u32>,
    /// Matching weights.
    pub top_weights: Vec<f64>,
}

impl JointAux {
    pub fn n_items(&self) -> usize {
        self.item_bias.len()
    }

    pub fn entries(&self, item: ItemId) -> Result<impl Iterator<Item = (u32, f64)> + '_> {
        let i = item as usize;
        if i >= self.n_items() {
            return Err(Error::UnknownItem(item));
        }
        let range = i * self.top_r..(i + 1) * self.top_r;
        Ok(self.top_ids[range.clone()]
            .iter()
            .copied()
            .zip(self.top_weights[range].iter().copied()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AuxData {
    Naive(NaiveAux),
    Cluster(ClusterAux),
    Joint(JointAux),
}

/// Model an aux payload is derived from.
#[derive(Debug, Clone, Copy)]
pub enum AuxSource<'a> {
    Public(&'a PublicModel),
    Joint(&'a JointModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum AuxParams {
    Naive,
    Cluster {
        n_clusters: usize,
        bloom: bool,
        seed: u64,
    },
    Joint {
        top_r: usize,
    },
}

pub fn build_aux(source: AuxSource<'_>, params: AuxParams) -> Result<AuxData> {
    match (source, params) {
        (AuxSource::Public(model), AuxParams::Naive) => Ok(AuxData::Naive(NaiveAux {
            mu: model.mu,
            item_bias: model.item_bias.clone(),
            item_vec: model.item_vec.clone(),
        })),
        (AuxSource::Public(model), AuxParams::Cluster { n_clusters, bloom, seed }) => {
            let clusters = kmeans_items(model, n_clusters, seed)?;
            Ok(cluster_aux(model.mu, &clusters, bloom))
        }
        (AuxSource::Joint(model), AuxParams::Joint { top_r }) => joint_aux(model, top_r),
        (AuxSource::Public(_), AuxParams::Joint { .. }) => Err(Error::VariantMismatch {
            expected: "joint model",
            actual: "public model",
        }),
        (AuxSource::Joint(_), _) => Err(Error::VariantMismatch {
            expected: "public model",
            actual: "joint model",
        }),
    }
}

pub fn cluster_aux(mu: f64, clusters: &ClusterModel, bloom: bool) -> AuxData {
    let membership = if bloom {
        let filters = bloom::encode_membership(&clusters.membership, clusters.n_clusters(), BLOOM_FP_RATE);
        let misresolved = clusters
            .membership
            .iter()
            .enumerate()
            .filter(|&(i, &c)| bloom::lookup(&filters, i as u32).0 != Some(c))
            .count() as u32;
        Membership::Bloom {
            filters,
            checksum: membership_checksum(&clusters.membership),
            misresolved,
        }
    } else {
        Membership::Plain(clusters.membership.clone())
    };
    AuxData::Cluster(ClusterAux {
        mu,
        n_items: clusters.membership.len() as u32,
        centroid_bias: clusters.centroid_bias.clone(),
        centroid_vec: clusters.centroid_vec.clone(),
        counts: clusters.counts.clone(),
        membership,
    })
}

pub fn membership_checksum(membership: &[u32]) -> [u8; 32] {
    let mut h = Sha256::new();
    for &c in membership {
        h.update(c.to_le_bytes());
    }
    h.finalize().into()
}

fn joint_aux(model: &JointModel, r: usize) -> Result<AuxData> {
    let z = model.n_clusters();
    if r < 1 || r > z {
        return Err(Error::invalid(format!("top-R must be in 1..={z} (number of clusters), got {r}")));
    }
    let n = model.n_items();
    let mut top_ids = Vec::with_capacity(n * r);
    let mut top_weights = Vec::with_capacity(n * r);
    for i in 0..n {
        for (id, w) in top_r(model.item_weights.row(i), r) {
            top_ids.push(id);
            top_weights.push(w);
        }
    }
    Ok(AuxData::Joint(JointAux {
        mu: model.mu,
        centers: model.centers.clone(),
        item_bias: model.item_bias.clone(),
        top_r: r,
        top_ids,
        top_weights,
    }))
}

impl AuxData {
    pub fn variant(&self) -> AuxVariant {
        match self {
            AuxData::Naive(_) => AuxVariant::Naive,
            AuxData::Cluster(_) => AuxVariant::Cluster,
            AuxData::Joint(_) => AuxVariant::Joint,
        }
    }

    pub fn mu(&self) -> f64 {
        match self {
            AuxData::Naive(a) => a.mu,
            AuxData::Cluster(a) => a.mu,
            AuxData::Joint(a) => a.mu,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            AuxData::Naive(a) => a.item_vec.dim(),
            AuxData::Cluster(a) => a.centroid_vec.dim(),
            AuxData::Joint(a) => a.centers.dim(),
        }
    }

    pub fn n_items(&self) -> usize {
        match self {
            AuxData::Naive(a) => a.item_bias.len(),
            AuxData::Cluster(a) => a.n_items as usize,
            AuxData::Joint(a) => a.item_bias.len(),
        }
    }

    /// The `(b_i, q_i)` a device can derive for `item` without any extra
    /// request: exact for naive, the top-R reconstruction for joint, the
    /// cluster centroid for cluster.
    pub fn item_factor(&self, item: ItemId) -> Result<(f64, Vec<f64>)> {
        match self {
            AuxData::Naive(a) => {
                let i = item as usize;
                if i >= a.item_bias.len() {
                    return Err(Error::UnknownItem(item));
                }
                Ok((a.item_bias[i], a.item_vec.row(i).to_vec()))
            }
            AuxData::Joint(a) => reconstruct_item_factor(a, item),
            AuxData::Cluster(a) => {
                let c = a.cluster_of(item)? as usize;
                Ok((a.centroid_bias[c], a.centroid_vec.row(c).to_vec()))
            }
        }
    }

    /// Analytic payload size, see [`aux_size_bytes`].
    pub fn payload_bytes(&self) -> u64 {
        match self {
            AuxData::Naive(a) => aux_size_bytes(SizeQuery::naive(a.item_vec.dim(), a.item_bias.len())),
            AuxData::Cluster(a) => aux_size_bytes(SizeQuery {
                variant: AuxVariant::Cluster,
                k: a.centroid_vec.dim(),
                n_items: a.n_items as usize,
                n_clusters: a.centroid_bias.len(),
                top_r: 0,
                bloom_bits_per_item: match &a.membership {
                    Membership::Plain(_) => None,
                    Membership::Bloom { filters, .. } => {
                        Some(filters.iter().map(|f| f.n_bits()).sum::<u64>() as f64 / f64::from(a.n_items.max(1)))
                    }
                },
            }),
            AuxData::Joint(a) => aux_size_bytes(SizeQuery {
                variant: AuxVariant::Joint,
                k: a.centers.dim(),
                n_items: a.item_bias.len(),
                n_clusters: a.centers.rows(),
                top_r: a.top_r,
                bloom_bits_per_item: None,
            }),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(AUX_MAGIC);
        match self {
            AuxData::Naive(a) => {
                w.section(0, |s| {
                    s.u8(0).u32(a.item_vec.dim() as u32).u32(a.item_bias.len() as u32);
                });
                w.section(1, |s| {
                    s.f64(a.mu);
                });
                w.section(2, |s| {
                    s.f64s(&a.item_bias);
                });
                w.section(3, |s| {
                    s.f64s(a.item_vec.as_slice());
                });
            }
            AuxData::Cluster(a) => {
                let kind = match a.membership {
                    Membership::Plain(_) => 0,
                    Membership::Bloom { .. } => 1,
                };
                w.section(0, |s| {
                    s.u8(1)
                        .u32(a.centroid_vec.dim() as u32)
                        .u32(a.n_items)
                        .u32(a.centroid_bias.len() as u32)
                        .u8(kind);
                });
                w.section(1, |s| {
                    s.f64(a.mu);
                });
                w.section(2, |s| {
                    s.f64s(&a.centroid_bias);
                });
                w.section(3, |s| {
                    s.f64s(a.centroid_vec.as_slice());
                });
                w.section(4, |s| {
                    s.u32s(&a.counts);
                });
                match &a.membership {
                    Membership::Plain(m) => w.section(5, |s| {
                        s.u32s(m);
                    }),
                    Membership::Bloom {
                        filters,
                        checksum,
                        misresolved,
                    } => w.section(5, |s| {
                        for f in filters {
                            s.u64(f.n_bits()).u32(f.n_hashes()).u64(f.words().len() as u64);
                            for &word in f.words() {
                                s.u64(word);
                            }
                        }
                        s.bytes(checksum).u32(*misresolved);
                    }),
                }
            }
            AuxData::Joint(a) => {
                w.section(0, |s| {
                    s.u8(2)
                        .u32(a.centers.dim() as u32)
                        .u32(a.item_bias.len() as u32)
                        .u32(a.centers.rows() as u32)
                        .u32(a.top_r as u32);
                });
                w.section(1, |s| {
                    s.f64(a.mu);
                });
                w.section(2, |s| {
                    s.f64s(a.centers.as_slice());
                });
                w.section(3, |s| {
                    s.f64s(&a.item_bias);
                });
                w.section(4, |s| {
                    s.u32s(&a.top_ids);
                });
                w.section(5, |s| {
                    s.f64s(&a.top_weights);
                });
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<AuxData> {
        let mut r = Reader::new(bytes, AUX_MAGIC)?;
        let mut header = r.section(0)?;
        let variant = header.u8()?;
        let aux = match variant {
            0 => {
                let k = header.u32()? as usize;
                let n = header.u32()? as usize;
                header.end()?;
                let mu = read_scalar(&mut r, 1)?;
                let item_bias = read_f64s(&mut r, 2, n)?;
                let item_vec = FactorMatrix::from_vec(n, k, read_f64s(&mut r, 3, n * k)?)?;
                AuxData::Naive(NaiveAux { mu, item_bias, item_vec })
            }
            1 => {
                let k = header.u32()? as usize;
                let n_items = header.u32()?;
                let n_clusters = header.u32()? as usize;
                let kind = header.u8()?;
                header.end()?;
                let mu = read_scalar(&mut r, 1)?;
                let centroid_bias = read_f64s(&mut r, 2, n_clusters)?;
                let centroid_vec = FactorMatrix::from_vec(n_clusters, k, read_f64s(&mut r, 3, n_clusters * k)?)?;
                let mut c = r.section(4)?;
                let counts = c.u32s(n_clusters)?;
                c.end()?;
                let mut m = r.section(5)?;
                let membership = match kind {
                    0 => Membership::Plain(m.u32s(n_items as usize)?),
                    1 => {
                        let mut filters = Vec::with_capacity(n_clusters);
                        for _ in 0..n_clusters {
                            let n_bits = m.u64()?;
                            let n_hashes = m.u32()?;
                            let n_words = m.u64()? as usize;
                            if n_bits == 0 || n_words as u64 != n_bits.div_ceil(64) {
                                return Err(Error::Decode("inconsistent bloom filter size".into()));
                            }
                            let words = (0..n_words).map(|_| m.u64()).collect::<Result<Vec<_>>>()?;
                            filters.push(BloomFilter::from_parts(n_bits, n_hashes, words));
                        }
                        let checksum: [u8; 32] = m.bytes(32)?.try_into().unwrap();
                        let misresolved = m.u32()?;
                        Membership::Bloom {
                            filters,
                            checksum,
                            misresolved,
                        }
                    }
                    other => return Err(Error::Decode(format!("unknown membership kind {other}"))),
                };
                m.end()?;
                if let Membership::Plain(ids) = &membership {
                    if ids.iter().any(|&c| c as usize >= n_clusters) {
                        return Err(Error::Decode("membership refers to a missing cluster".into()));
                    }
                }
                AuxData::Cluster(ClusterAux {
                    mu,
                    n_items,
                    centroid_bias,
                    centroid_vec,
                    counts,
                    membership,
                })
            }
            2 => {
                let k = header.u32()? as usize;
                let n = header.u32()? as usize;
                let z = header.u32()? as usize;
                let top_r = header.u32()? as usize;
                header.end()?;
                let mu = read_scalar(&mut r, 1)?;
                let centers = FactorMatrix::from_vec(z, k, read_f64s(&mut r, 2, z * k)?)?;
                let item_bias = read_f64s(&mut r, 3, n)?;
                let mut ids = r.section(4)?;
                let top_ids = ids.u32s(n * top_r)?;
                ids.end()?;
                if top_ids.iter().any(|&c| c as usize >= z) {
                    return Err(Error::Decode("top-R entry refers to a missing cluster".into()));
                }
                let top_weights = read_f64s(&mut r, 5, n * top_r)?;
                AuxData::Joint(JointAux {
                    mu,
                    centers,
                    item_bias,
                    top_r,
                    top_ids,
                    top_weights,
                })
            }
            other => return Err(Error::Decode(format!("unknown aux variant {other}"))),
        };
        r.finish()?;
        Ok(aux)
    }

    pub fn checksum(&self) -> String {
        sha256_hex(&self.encode())
    }

    pub fn manifest(&self) -> AuxManifest {
        let encoded = self.encode();
        let (n_clusters, top_r, bloom) = match self {
            AuxData::Naive(_) => (0, 0, false),
            AuxData::Cluster(a) => (a.centroid_bias.len(), 0, matches!(a.membership, Membership::Bloom { .. })),
            AuxData::Joint(a) => (a.centers.rows(), a.top_r, false),
        };
        AuxManifest {
            format_version: 1,
            variant: self.variant(),
            k: self.k(),
            n_items: self.n_items(),
            n_clusters,
            top_r,
            bloom,
            payload_bytes: self.payload_bytes(),
            encoded_bytes: encoded.len() as u64,
            sha256: sha256_hex(&encoded),
        }
    }
}

fn read_scalar(r: &mut Reader<'_>, tag: u8) -> Result<f64> {
    let mut s = r.section(tag)?;
    let v = s.f64()?;
    s.end()?;
    Ok(v)
}

fn read_f64s(r: &mut Reader<'_>, tag: u8, n: usize) -> Result<Vec<f64>> {
    let mut s = r.section(tag)?;
    let v = s.f64s(n)?;
    s.end()?;
    Ok(v)
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// JSON sidecar describing an encoded aux payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxManifest {
    pub format_version: u32,
    pub variant: AuxVariant,
    pub k: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub top_r: usize,
    pub bloom: bool,
    pub payload_bytes: u64,
    pub encoded_bytes: u64,
    pub sha256: String,
}

/// `Σ_n w_n C_n` over the stored top-R pairs, with `b_i` verbatim.
pub fn reconstruct_item_factor(aux: &JointAux, item: ItemId) -> Result<(f64, Vec<f64>)> {
    let mut weights = vec![0.0; aux.centers.rows()];
    for (c, w) in aux.entries(item)? {
        weights[c as usize] = w;
    }
    Ok((aux.item_bias[item as usize], combine(&aux.centers, &weights)))
}

/// Inputs to [`aux_size_bytes`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeQuery {
    pub variant: AuxVariant,
    pub k: usize,
    pub n_items: usize,
    /// K for the cluster variant, z for the joint variant.
    pub n_clusters: usize,
    pub top_r: usize,
    /// `None` for a plain 4-byte-per-item membership array.
    pub bloom_bits_per_item: Option<f64>,
}

impl SizeQuery {
    pub fn naive(k: usize, n_items: usize) -> Self {
        SizeQuery {
            variant: AuxVariant::Naive,
            k,
            n_items,
            n_clusters: 0,
            top_r: 0,
            bloom_bits_per_item: None,
        }
    }

    pub fn cluster(k: usize, n_items: usize, n_clusters: usize, bloom: bool) -> Self {
        SizeQuery {
            variant: AuxVariant::Cluster,
            k,
            n_items,
            n_clusters,
            top_r: 0,
            bloom_bits_per_item: bloom.then_some(BITS_PER_ITEM_1PCT),
        }
    }

    pub fn joint(k: usize, n_items: usize, z: usize, top_r: usize) -> Self {
        SizeQuery {
            variant: AuxVariant::Joint,
            k,
            n_items,
            n_clusters: z,
            top_r,
            bloom_bits_per_item: None,
        }
    }
}

/// Bytes of item factors alone: `8 k |I|`.
pub fn naive_factor_bytes(k: usize, n_items: usize) -> u64 {
    8 * k as u64 * n_items as u64
}

/// Analytic aux payload size with 8-byte reals and 4-byte ids:
///
/// * naive: `8 k |I| + 8 |I|`
/// * cluster: `8 (k + 1) K` plus `4 |I|` plain membership, or the bloom
///   filters at `bloom_bits_per_item` bits per item
/// * joint: `8 k z + 8 |I| + 12 R |I|`
pub fn aux_size_bytes(q: SizeQuery) -> u64 {
    let (k, n) = (q.k as u64, q.n_items as u64);
    match q.variant {
        AuxVariant::Naive => naive_factor_bytes(q.k, q.n_items) + 8 * n,
        AuxVariant::Cluster => {
            let membership = match q.bloom_bits_per_item {
                None => 4 * n,
                Some(bits) => (bits * n as f64 / 8.0).ceil() as u64,
            };
            8 * (k + 1) * q.n_clusters as u64 + membership
        }
        AuxVariant::Joint => 8 * k * q.n_clusters as u64 + 8 * n + q.top_r as u64 * (8 + 4) * n,
    }
}

/// Size in MiB, as used when quoting download sizes.
pub fn to_mib(bytes: u64) -> f64 {
    bytes as f64 / (1u64 << 20) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Hyperparams;
    use crate::server::joint::init_joint;
    use crate::server::sgd::constant_model;
    use proptest::prelude::*;

    fn small_public(n_items: usize, k: usize) -> PublicModel {
        let mut m = constant_model(3.5, 2, n_items, k);
        for i in 0..n_items {
            m.item_bias[i] = (i as f64 * 0.37).sin();
            for (f, x) in m.item_vec.row_mut(i).iter_mut().enumerate() {
                *x = ((i * 7 + f * 3) as f64).cos();
            }
        }
        m
    }

    fn small_joint(z: usize) -> JointModel {
        let hp = Hyperparams {
            k: 3,
            seed: 9,
            init_std: 0.5,
            ..Hyperparams::default()
        };
        init_joint(3.0, 2, 6, &hp, z)
    }

    #[test]
    fn size_formula_examples() {
        assert_eq!(naive_factor_bytes(100, 1 << 17), 100 << 20);
        assert_eq!(to_mib(naive_factor_bytes(100, 1 << 17)), 100.0);
        assert!((to_mib(naive_factor_bytes(100, 1682)) - 1.2833).abs() < 1e-4);
        assert_eq!(aux_size_bytes(SizeQuery::cluster(100, 1682, 10, false)) - 8 * 101 * 10, 6728);
        // one million items at k = 100 is about 763 MiB
        assert_eq!(to_mib(naive_factor_bytes(100, 1_000_000)).round(), 763.0);
        assert_eq!(
            aux_size_bytes(SizeQuery::joint(100, 1682, 50, 3)),
            8 * 100 * 50 + 8 * 1682 + 36 * 1682
        );
    }

    #[test]
    fn joint_with_full_r_reconstructs_exactly() {
        let m = small_joint(4);
        let AuxData::Joint(aux) = build_aux(AuxSource::Joint(&m), AuxParams::Joint { top_r: 4 }).unwrap() else {
            unreachable!()
        };
        for i in 0..6 {
            let (b, q) = reconstruct_item_factor(&aux, i as u32).unwrap();
            assert_eq!(b, m.item_bias[i]);
            let full = m.item_factor(i);
            for (a, e) in q.iter().zip(&full) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn top_r_larger_than_z_is_rejected() {
        let m = small_joint(3);
        assert!(build_aux(AuxSource::Joint(&m), AuxParams::Joint { top_r: 4 }).is_err());
        assert!(build_aux(AuxSource::Public(&small_public(3, 2)), AuxParams::Joint { top_r: 1 }).is_err());
    }

    #[test]
    fn singleton_clusters_give_exact_factors() {
        let m = small_public(8, 3);
        let aux = build_aux(
            AuxSource::Public(&m),
            AuxParams::Cluster {
                n_clusters: 8,
                bloom: false,
                seed: 0,
            },
        )
        .unwrap();
        for i in 0..8u32 {
            let (b, q) = aux.item_factor(i).unwrap();
            assert_eq!(b, m.item_bias[i as usize]);
            assert_eq!(q, m.item_vec.row(i as usize));
        }
    }

    #[test]
    fn naive_round_trip_and_manifest() {
        let aux = build_aux(AuxSource::Public(&small_public(5, 4)), AuxParams::Naive).unwrap();
        let bytes = aux.encode();
        let back = AuxData::decode(&bytes).unwrap();
        assert_eq!(back, aux);
        assert_eq!(back.encode(), bytes);
        let manifest = aux.manifest();
        assert_eq!(manifest.encoded_bytes, bytes.len() as u64);
        assert_eq!(manifest.payload_bytes, 8 * 4 * 5 + 8 * 5);
        assert_eq!(manifest.sha256, aux.checksum());
    }

    #[test]
    fn decode_rejects_corruption() {
        let aux = build_aux(AuxSource::Public(&small_public(5, 4)), AuxParams::Naive).unwrap();
        let mut bytes = aux.encode();
        assert!(AuxData::decode(&bytes[..bytes.len() - 3]).is_err());
        bytes[0] = b'X';
        assert!(AuxData::decode(&bytes).is_err());
    }

    #[test]
    fn bloom_membership_resolves_and_round_trips() {
        let m = small_public(200, 3);
        let aux = build_aux(
            AuxSource::Public(&m),
            AuxParams::Cluster {
                n_clusters: 6,
                bloom: true,
                seed: 2,
            },
        )
        .unwrap();
        let AuxData::Cluster(c) = &aux else { unreachable!() };
        let Membership::Bloom { misresolved, checksum, .. } = &c.membership else {
            unreachable!()
        };
        let truth = kmeans_items(&m, 6, 2).unwrap().membership;
        let resolved = c.resolved_membership().unwrap();
        let wrong = truth.iter().zip(&resolved).filter(|(a, b)| a != b).count() as u32;
        assert_eq!(wrong, *misresolved);
        assert_eq!(membership_checksum(&truth), *checksum);
        assert_eq!(*checksum == membership_checksum(&resolved), wrong == 0);
        let back = AuxData::decode(&aux.encode()).unwrap();
        assert_eq!(back, aux);
    }

    proptest! {
        #[test]
        fn every_variant_round_trips_bit_exactly(
            n_items in 1usize..20, k in 1usize..5, kk in 1usize..5, z in 1usize..5, seed: u64, bloom: bool
        ) {
            let public = small_public(n_items, k);
            let n_clusters = kk.min(n_items);
            let joint = small_joint(z);
            let auxes = [
                build_aux(AuxSource::Public(&public), AuxParams::Naive).unwrap(),
                build_aux(AuxSource::Public(&public), AuxParams::Cluster { n_clusters, bloom, seed }).unwrap(),
                build_aux(AuxSource::Joint(&joint), AuxParams::Joint { top_r: 1 + seed as usize % z }).unwrap(),
            ];
            for aux in auxes {
                let bytes = aux.encode();
                let back = AuxData::decode(&bytes).unwrap();
                prop_assert_eq!(&back, &aux);
                prop_assert_eq!(back.encode(), bytes);
            }
        }
    }
}
