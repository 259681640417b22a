//! K-means over item factors.
//!
//! Points are the augmented item factors `[q_i, b_i]`, so the bias takes part
//! in the Euclidean distance. Seeding is k-means++; Lloyd iterations run until
//! the assignment stops changing or `MAX_ITERS` is reached. Assignment ties
//! go to the lowest cluster id, and an empty cluster is re-seeded with the
//! point farthest from its centroid.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{FactorMatrix, PublicModel};
use crate::rng;

pub const MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centroid_vec: FactorMatrix,
    pub centroid_bias: Vec<f64>,
    /// Item id to cluster id.
    pub membership: Vec<u32>,
    /// Items per cluster.
    pub counts: Vec<u32>,
    /// Distortion measured after every assignment step.
    pub distortion_history: Vec<f64>,
}

impl ClusterModel {
    pub fn n_clusters(&self) -> usize {
        self.centroid_bias.len()
    }

    pub fn distortion(&self) -> f64 {
        self.distortion_history.last().copied().unwrap_or(0.0)
    }
}

/// Clusters the item factors of `model` into `n_clusters` groups.
pub fn kmeans_items(model: &PublicModel, n_clusters: usize, seed: u64) -> Result<ClusterModel> {
    let n = model.n_items();
    if n_clusters < 1 || n_clusters > n {
        return Err(Error::invalid(format!(
            "number of clusters must be in 1..={n}, got {n_clusters}"
        )));
    }
    let dim = model.k() + 1;
    let mut points = Vec::with_capacity(n * dim);
    for i in 0..n {
        points.extend_from_slice(model.item_vec.row(i));
        points.push(model.item_bias[i]);
    }
    let points = FactorMatrix::from_vec(n, dim, points)?;

    if n_clusters == n {
        return Ok(split(singletons(&points), model.k()));
    }
    Ok(split(lloyd(&points, n_clusters, seed), model.k()))
}

/// Raw k-means on arbitrary points; exposed for the exhaustive-partition tests.
pub fn kmeans_points(points: &FactorMatrix, n_clusters: usize, seed: u64) -> Result<Clustering> {
    if n_clusters < 1 || n_clusters > points.rows() {
        return Err(Error::invalid("number of clusters out of range"));
    }
    Ok(lloyd(points, n_clusters, seed))
}

#[derive(Debug, Clone)]
pub struct Clustering {
    pub centroids: FactorMatrix,
    pub assignment: Vec<u32>,
    pub counts: Vec<u32>,
    pub distortion_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn singletons(points: &FactorMatrix) -> Clustering {
    let n = points.rows();
    Clustering {
        centroids: points.clone(),
        assignment: (0..n as u32).collect(),
        counts: vec![1; n],
        distortion_history: vec![0.0],
    }
}

fn seed_plus_plus(points: &FactorMatrix, n_clusters: usize, seed: u64) -> FactorMatrix {
    let (n, dim) = (points.rows(), points.dim());
    let mut rng = rng::stream(seed, "kmeans++", 0);
    let mut centroids = FactorMatrix::zeros(n_clusters, dim);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|p| sq_dist(points.row(p), points.row(first))).collect();

    for c in 1..n_clusters {
        let total: f64 = nearest.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (p, &d) in nearest.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = p;
                    break;
                }
                target -= d;
            }
            // guard against rounding leaving `pick` on a zero-weight point
            if nearest[pick] == 0.0 {
                pick = nearest.iter().rposition(|&d| d > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // all points coincide with a chosen centroid
            first
        };
        centroids.row_mut(c).copy_from_slice(points.row(chosen));
        for (p, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(p), points.row(chosen)));
        }
    }
    centroids
}

fn assign(points: &FactorMatrix, centroids: &FactorMatrix, assignment: &mut [u32]) -> f64 {
    let mut distortion = 0.0;
    for (p, slot) in assignment.iter_mut().enumerate() {
        let point = points.row(p);
        let mut best = (f64::INFINITY, 0u32);
        for c in 0..centroids.rows() {
            let d = sq_dist(point, centroids.row(c));
            if d < best.0 {
                best = (d, c as u32);
            }
        }
        *slot = best.1;
        distortion += best.0;
    }
    distortion
}

fn update(points: &FactorMatrix, assignment: &[u32], centroids: &mut FactorMatrix) -> Vec<u32> {
    let dim = points.dim();
    let mut counts = vec![0u32; centroids.rows()];
    let mut sums = FactorMatrix::zeros(centroids.rows(), dim);
    for (p, &c) in assignment.iter().enumerate() {
        counts[c as usize] += 1;
        for (s, x) in sums.row_mut(c as usize).iter_mut().zip(points.row(p)) {
            *s += x;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            let row = centroids.row_mut(c);
            for (dst, s) in row.iter_mut().zip(sums.row(c)) {
                *dst = s / count as f64;
            }
        }
    }
    counts
}

fn lloyd(points: &FactorMatrix, n_clusters: usize, seed: u64) -> Clustering {
    let n = points.rows();
    let mut centroids = seed_plus_plus(points, n_clusters, seed);
    let mut assignment = vec![u32::MAX; n];
    let mut previous = assignment.clone();
    let mut history = Vec::new();
    let mut counts = vec![0; n_clusters];

    for iter in 0..MAX_ITERS {
        let distortion = assign(points, &centroids, &mut assignment);
        if let Some(&last) = history.last() {
            debug_assert!(
                distortion <= last * (1.0 + 1e-9) + 1e-12,
                "distortion increased: {last} -> {distortion}"
            );
        }
        history.push(distortion);
        if iter > 0 && assignment == previous {
            break;
        }
        previous.copy_from_slice(&assignment);
        counts = update(points, &assignment, &mut centroids);
        reseed_empty(points, &assignment, &mut centroids, &mut counts);
    }
    // centroids are the means of the final assignment
    counts = update(points, &assignment, &mut centroids);

    Clustering {
        centroids,
        assignment,
        counts,
        distortion_history: history,
    }
}

/// Moves every empty centroid onto the point farthest from its own centroid,
/// taken from clusters with at least two members. Nothing is moved when every
/// point already sits on its centroid.
fn reseed_empty(points: &FactorMatrix, assignment: &[u32], centroids: &mut FactorMatrix, counts: &mut [u32]) {
    let mut taken = vec![false; assignment.len()];
    for c in 0..counts.len() {
        if counts[c] > 0 {
            continue;
        }
        let mut far = (0.0, None);
        for (p, &a) in assignment.iter().enumerate() {
            if taken[p] || counts[a as usize] < 2 {
                continue;
            }
            let d = sq_dist(points.row(p), centroids.row(a as usize));
            if d > far.0 {
                far = (d, Some(p));
            }
        }
        if let (_, Some(p)) = far {
            taken[p] = true;
            counts[assignment[p] as usize] -= 1;
            counts[c] = 1;
            let point = points.row(p).to_vec();
            centroids.row_mut(c).copy_from_slice(&point);
        }
    }
}

fn split(clustering: Clustering, k: usize) -> ClusterModel {
    let n_clusters = clustering.centroids.rows();
    let mut centroid_vec = FactorMatrix::zeros(n_clusters, k);
    let mut centroid_bias = vec![0.0; n_clusters];
    for c in 0..n_clusters {
        let row = clustering.centroids.row(c);
        centroid_vec.row_mut(c).copy_from_slice(&row[..k]);
        centroid_bias[c] = row[k];
    }
    ClusterModel {
        centroid_vec,
        centroid_bias,
        membership: clustering.assignment,
        counts: clustering.counts,
        distortion_history: clustering.distortion_history,
    }
}
