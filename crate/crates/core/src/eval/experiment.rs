//! Cross-validated comparison of the private fine-tuning methods against the
//! baselines.
//!
//! Every fold allocates privacy marks on its training part once; all methods
//! then train on that same partition and predict the same held-out ratings.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::digest::privacy_digest;
use super::metrics::{ndcg_at, rmse, Scored};
use super::report::{FoldRow, RunReport};
use crate::baselines::{
    abs_optimistic, abs_pessimistic, dp_baseline, obfuscation_baseline, public_or_midpoint, DPConfig,
    ObfuscationConfig,
};
use crate::device::{rerank_top_n, ClusterScoring, Device, DeviceContext};
use crate::error::{Error, Result};
use crate::ingest::{kfold, FoldSplit};
use crate::model::{Hyperparams, PublicModel, RatingsDataset, UserId};
use crate::privacy::{allocate, allocate_with_ratios, BetaConfig, Hypothesis, PrivacyPartition};
use crate::rng::derive_seed;
use crate::server::aux::{build_aux, AuxParams, AuxSource};
use crate::server::joint::train_joint;
use crate::server::topn::{Server, ServerModel, DEFAULT_N_PRIME_FACTOR};

fn default_top_r() -> usize {
    3
}

/// A method to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    AbsOptimistic,
    AbsPessimistic,
    OnlyPublic,
    Naive,
    Cluster {
        n_clusters: usize,
        #[serde(default)]
        bloom: bool,
    },
    Joint {
        n_clusters: usize,
        #[serde(default = "default_top_r")]
        top_r: usize,
    },
    Dp(DPConfig),
    Obfuscation(ObfuscationConfig),
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::AbsOptimistic => "abs_optimistic".into(),
            Method::AbsPessimistic => "abs_pessimistic".into(),
            Method::OnlyPublic => "only_public".into(),
            Method::Naive => "naive".into(),
            Method::Cluster { n_clusters, bloom } => {
                format!("cluster(K={n_clusters}{})", if *bloom { ",bloom" } else { "" })
            }
            Method::Joint { n_clusters, top_r } => format!("joint(z={n_clusters},R={top_r})"),
            Method::Dp(c) => format!("dp(beta_m={},sigma={})", c.beta_m, c.noise_sigma),
            Method::Obfuscation(c) => format!("obfuscation({:?},peers={})", c.policy, c.n_peers),
        }
    }

    pub fn is_private_fine_tuning(&self) -> bool {
        matches!(self, Method::Naive | Method::Cluster { .. } | Method::Joint { .. })
    }

    /// Every static constraint this method violates for a catalogue of
    /// `n_items` items and `n_users` users.
    pub fn violations(&self, n_users: usize, n_items: usize) -> Vec<String> {
        let label = self.label();
        let mut out = Vec::new();
        match self {
            Method::Cluster { n_clusters, .. } => {
                if *n_clusters < 1 {
                    out.push(format!("{label}: K must be at least 1"));
                } else if *n_clusters > n_items {
                    out.push(format!("{label}: K must not exceed the {n_items} items"));
                }
            }
            Method::Joint { n_clusters, top_r } => {
                if *n_clusters < 1 {
                    out.push(format!("{label}: z must be at least 1"));
                }
                if *top_r < 1 || top_r > n_clusters {
                    out.push(format!("{label}: R must satisfy 1 <= R <= z"));
                }
            }
            Method::Dp(c) => {
                if let Err(e) = c.validate() {
                    out.push(format!("{label}: {e}"));
                }
            }
            Method::Obfuscation(c) => {
                if let Err(e) = c.validate() {
                    out.push(format!("{label}: {e}"));
                }
                if c.n_peers + 1 > n_users {
                    out.push(format!("{label}: n_peers must be at most {} (users - 1)", n_users.saturating_sub(1)));
                }
            }
            _ => {}
        }
        out
    }
}

fn default_methods() -> Vec<Method> {
    vec![
        Method::AbsOptimistic,
        Method::AbsPessimistic,
        Method::OnlyPublic,
        Method::Naive,
    ]
}

/// One cross-validated run: a single privacy configuration and a list of
/// methods. Per-fold training and allocation seeds are derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub n_folds: usize,
    pub seed: u64,
    pub hypothesis: Hypothesis,
    pub beta: BetaConfig,
    pub methods: Vec<Method>,
    pub hyperparams: Hyperparams,
    /// Device epochs; defaults to `hyperparams.epochs`.
    pub device_epochs: Option<usize>,
    pub cluster_scoring: ClusterScoring,
    pub clamp_predictions: bool,
    /// Final recommendation list length N.
    pub top_n: usize,
    /// Candidate list length N′; defaults to `5 N`.
    pub n_prime: Option<usize>,
    /// Gives every user (H1) or item (H2) this exact privacy ratio instead
    /// of a beta draw. Covers the degenerate ratios 0 and 1.
    pub fixed_ratio: Option<f64>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            n_folds: 5,
            seed: 0,
            hypothesis: Hypothesis::H1,
            beta: BetaConfig::BALANCED,
            methods: default_methods(),
            hyperparams: Hyperparams::default(),
            device_epochs: None,
            cluster_scoring: ClusterScoring::default(),
            clamp_predictions: false,
            top_n: 10,
            n_prime: None,
            fixed_ratio: None,
        }
    }
}

impl ExperimentSpec {
    pub fn n_prime(&self) -> usize {
        self.n_prime.unwrap_or(DEFAULT_N_PRIME_FACTOR * self.top_n)
    }

    /// Every violation of a static constraint against `dataset`.
    pub fn violations(&self, dataset: &RatingsDataset) -> Vec<String> {
        self.violations_for(Some((dataset.len(), dataset.n_users(), dataset.n_items())))
    }

    /// Violations checkable without data: everything except limits set by
    /// the number of ratings, users or items.
    pub fn violations_without_data(&self) -> Vec<String> {
        self.violations_for(None)
    }

    fn violations_for(&self, sizes: Option<(usize, usize, usize)>) -> Vec<String> {
        let (n_ratings, n_users, n_items) = sizes.unwrap_or((usize::MAX, usize::MAX, usize::MAX));
        let mut out = Vec::new();
        if self.n_folds < 2 {
            out.push("n_folds must be at least 2".to_owned());
        } else if self.n_folds > n_ratings {
            out.push(format!("n_folds = {} exceeds the {n_ratings} ratings", self.n_folds));
        }
        if let Err(e) = self.hyperparams.validate() {
            out.push(e.to_string());
        }
        match self.fixed_ratio {
            Some(r) if !(0.0..=1.0).contains(&r) => out.push(format!("fixed_ratio = {r} must lie in [0, 1]")),
            Some(_) => {}
            None => {
                if let Err(e) = self.beta.validate() {
                    out.push(e.to_string());
                }
            }
        }
        if self.methods.is_empty() {
            out.push("no methods requested".to_owned());
        }
        if self.top_n < 1 {
            out.push("top_n must be at least 1".to_owned());
        }
        if self.n_prime() < self.top_n {
            out.push(format!("N' = {} must be at least N = {}", self.n_prime(), self.top_n));
        }
        for m in &self.methods {
            out.extend(m.violations(n_users, n_items));
        }
        out
    }

    pub fn validate(&self, dataset: &RatingsDataset) -> Result<()> {
        let v = self.violations(dataset);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(v.join("; ")))
        }
    }

    /// Hyperparameters used for fold `fold`.
    pub fn fold_hyperparams(&self, fold: usize) -> Hyperparams {
        Hyperparams {
            seed: derive_seed(self.seed, "train", fold as u64),
            ..self.hyperparams
        }
    }

    pub fn privacy_seed(&self, fold: usize) -> u64 {
        derive_seed(self.seed, "privacy", fold as u64)
    }
}

/// A fold with its privacy partition.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub index: usize,
    pub train: RatingsDataset,
    pub test: RatingsDataset,
    pub partition: PrivacyPartition,
    test_by_user: Vec<Vec<usize>>,
}

impl FoldData {
    pub fn prepare(split: FoldSplit, spec: &ExperimentSpec) -> Result<Self> {
        let seed = spec.privacy_seed(split.fold_index);
        let partition = match spec.fixed_ratio {
            Some(r) => {
                let groups = match spec.hypothesis {
                    Hypothesis::H1 => split.train.n_users(),
                    Hypothesis::H2 => split.train.n_items(),
                };
                allocate_with_ratios(&split.train, spec.hypothesis, vec![r; groups], seed)?
            }
            None => allocate(&split.train, spec.hypothesis, &spec.beta, seed)?,
        };
        Self::with_partition(split, partition)
    }

    /// Uses a caller-supplied partition of `split.train`.
    pub fn with_partition(split: FoldSplit, partition: PrivacyPartition) -> Result<Self> {
        partition.check_disjoint_union(&split.train)?;
        let mut test_by_user = vec![Vec::new(); split.test.n_users()];
        for (idx, r) in split.test.ratings().iter().enumerate() {
            test_by_user[r.user as usize].push(idx);
        }
        Ok(FoldData {
            index: split.fold_index,
            train: split.train,
            test: split.test,
            partition,
            test_by_user,
        })
    }

    pub fn truths(&self) -> Vec<f64> {
        self.test.ratings().iter().map(|r| r.value).collect()
    }
}

/// Predictions for every held-out rating of a fold, in test order, plus
/// what the server side looked like for the private fine-tuning methods.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutput {
    pub predictions: Vec<f64>,
    pub aux_bytes: Option<u64>,
    pub server_digest: Option<String>,
    pub requests: usize,
}

impl MethodOutput {
    fn plain(predictions: Vec<f64>) -> Self {
        MethodOutput {
            predictions,
            aux_bytes: None,
            server_digest: None,
            requests: 0,
        }
    }
}

/// Caches the only-public model, shared by the only-public baseline and the
/// private fine-tuning methods of one fold.
#[derive(Debug, Default)]
pub struct FoldCache {
    public_model: Option<PublicModel>,
}

impl FoldCache {
    fn public_model(&mut self, fold: &FoldData, hp: &Hyperparams) -> Result<&PublicModel> {
        if self.public_model.is_none() {
            self.public_model = Some(public_or_midpoint(&fold.partition.public, hp)?);
        }
        Ok(self.public_model.as_ref().expect("just filled"))
    }
}

fn model_predictions(model: &PublicModel, test: &RatingsDataset) -> Result<Vec<f64>> {
    test.ratings().iter().map(|r| model.predict(r.user, r.item)).collect()
}

/// Runs one method on one fold.
pub fn run_method(fold: &FoldData, method: &Method, spec: &ExperimentSpec, cache: &mut FoldCache) -> Result<MethodOutput> {
    let hp = spec.fold_hyperparams(fold.index);
    let started = Instant::now();
    let out = match method {
        Method::AbsOptimistic => MethodOutput::plain(model_predictions(&abs_optimistic(&fold.train, &hp)?, &fold.test)?),
        Method::AbsPessimistic => {
            let p = abs_pessimistic(&fold.train);
            MethodOutput::plain(fold.test.ratings().iter().map(|r| p.predict(r.user)).collect())
        }
        Method::OnlyPublic => MethodOutput::plain(model_predictions(cache.public_model(fold, &hp)?, &fold.test)?),
        Method::Dp(cfg) => {
            let cfg = DPConfig {
                seed: derive_seed(spec.seed ^ cfg.seed, "dp", fold.index as u64),
                ..*cfg
            };
            MethodOutput::plain(model_predictions(&dp_baseline(&fold.train, &cfg, &hp)?, &fold.test)?)
        }
        Method::Obfuscation(cfg) => {
            let cfg = ObfuscationConfig {
                seed: derive_seed(spec.seed ^ cfg.seed, "obfuscation", fold.index as u64),
                ..*cfg
            };
            MethodOutput::plain(model_predictions(&obfuscation_baseline(&fold.train, &cfg, &hp)?, &fold.test)?)
        }
        Method::Naive | Method::Cluster { .. } | Method::Joint { .. } => {
            let server = build_server(fold, method, &hp, cache)?;
            run_devices(fold, &server, spec, &hp)?
        }
    };
    log::info!(
        "fold {} {}: {:.2?}",
        fold.index,
        method.label(),
        started.elapsed()
    );
    Ok(out)
}

/// The server side of a private fine-tuning method: trained model plus aux.
pub fn build_server(fold: &FoldData, method: &Method, hp: &Hyperparams, cache: &mut FoldCache) -> Result<Server> {
    let public = &fold.partition.public;
    let (model, aux) = match *method {
        Method::Naive => {
            let pm = cache.public_model(fold, hp)?;
            (ServerModel::Public(pm.clone()), build_aux(AuxSource::Public(pm), AuxParams::Naive)?)
        }
        Method::Cluster { n_clusters, bloom } => {
            let pm = cache.public_model(fold, hp)?;
            let params = AuxParams::Cluster {
                n_clusters,
                bloom,
                seed: derive_seed(hp.seed, "kmeans", 0),
            };
            (ServerModel::Public(pm.clone()), build_aux(AuxSource::Public(pm), params)?)
        }
        Method::Joint { n_clusters, top_r } => {
            let joint = train_joint(public, hp, n_clusters)?;
            let aux = build_aux(AuxSource::Joint(&joint), AuxParams::Joint { top_r })?;
            (ServerModel::Joint(joint), aux)
        }
        _ => return Err(Error::invalid(format!("{} has no server/device split", method.label()))),
    };
    Server::new(public.clone(), model, aux)
}

/// Every user downloads the broadcast and their public factor, fine-tunes on
/// their private ratings and predicts their held-out ratings. Devices with
/// cluster aux then run the top-N′ protocol. The server digest must not move
/// while devices train.
pub fn run_devices(fold: &FoldData, server: &Server, spec: &ExperimentSpec, hp: &Hyperparams) -> Result<MethodOutput> {
    let before = privacy_digest(server);
    let aux = DeviceContext::verify_broadcast(server.broadcast(), &server.aux().checksum())?;
    let device_hp = Hyperparams {
        epochs: spec.device_epochs.unwrap_or(hp.epochs),
        ..*hp
    };
    let n_users = fold.partition.private_per_user.len();
    let test = fold.test.ratings();

    let devices: Vec<(Device<'_>, Vec<(usize, f64)>)> = (0..n_users)
        .into_par_iter()
        .map(|u| {
            let user = u as UserId;
            let ctx = DeviceContext::new(
                user,
                server.user_factor(user)?,
                &aux,
                fold.partition.private_per_user[u].clone(),
                device_hp,
            )?;
            let device = Device::train(&ctx)?;
            let mut preds = Vec::with_capacity(fold.test_by_user[u].len());
            for &idx in &fold.test_by_user[u] {
                let item = test[idx].item;
                let p = device.predict_for_eval(item, spec.cluster_scoring, || {
                    server.scorer().item_factor(item).map(|(b, q)| (b, q.to_vec()))
                })?;
                preds.push((idx, p));
            }
            Ok((device, preds))
        })
        .collect::<Result<_>>()?;

    let after = privacy_digest(server);
    if before != after {
        return Err(Error::invalid("server state changed while devices were fine-tuning"));
    }

    if let crate::server::aux::AuxData::Cluster(_) = server.aux() {
        let n_prime = spec.n_prime();
        devices.par_iter().enumerate().try_for_each(|(u, (device, _))| -> Result<()> {
            let candidates = server.top_n_prime(u as UserId, n_prime)?;
            if !candidates.is_empty() {
                rerank_top_n(&candidates, device.private_model(), spec.top_n.min(candidates.len()))?;
            }
            Ok(())
        })?;
    }

    let mut predictions = vec![f64::NAN; test.len()];
    for (_, preds) in &devices {
        for &(idx, p) in preds {
            predictions[idx] = p;
        }
    }
    Ok(MethodOutput {
        predictions,
        aux_bytes: Some(server.aux().payload_bytes()),
        server_digest: Some(privacy_digest(server)),
        requests: server.requests().len(),
    })
}

/// RMSE and NDCG@10 of `predictions` on the fold's held-out ratings.
pub fn score(fold: &FoldData, predictions: &[f64], clamp: Option<(f64, f64)>) -> Result<(f64, f64)> {
    let preds: Vec<f64> = match clamp {
        Some((lo, hi)) => predictions.iter().map(|p| p.clamp(lo, hi)).collect(),
        None => predictions.to_vec(),
    };
    let truths = fold.truths();
    let r = rmse(&preds, &truths)?;
    let test = fold.test.ratings();
    let per_user: Vec<Vec<Scored>> = fold
        .test_by_user
        .iter()
        .map(|idxs| {
            idxs.iter()
                .map(|&i| Scored {
                    item: test[i].item,
                    predicted: preds[i],
                    truth: test[i].value,
                })
                .collect()
        })
        .collect();
    Ok((r, ndcg_at(&per_user, 10)))
}

fn evaluate_fold(split: FoldSplit, spec: &ExperimentSpec) -> Vec<FoldRow> {
    let index = split.fold_index;
    let n_test = split.test.len();
    let fold = match FoldData::prepare(split, spec) {
        Ok(f) => f,
        Err(e) => {
            return spec
                .methods
                .iter()
                .map(|m| FoldRow::failed(m.label(), index, n_test, e.to_string()))
                .collect()
        }
    };
    let clamp = spec.clamp_predictions.then(|| fold.train.scale());
    let mut cache = FoldCache::default();
    spec.methods
        .iter()
        .map(|m| {
            let label = m.label();
            match run_method(&fold, m, spec, &mut cache).and_then(|out| score(&fold, &out.predictions, clamp).map(|s| (out, s))) {
                Ok((out, (r, n))) => FoldRow {
                    method: label,
                    fold: index,
                    mean_ratio: fold.partition.mean_ratio(),
                    private_fraction: fold.partition.private_fraction(),
                    rmse: Some(r),
                    ndcg_at_10: Some(n),
                    n_test: fold.test.len(),
                    aux_bytes: out.aux_bytes,
                    server_digest: out.server_digest,
                    error: None,
                },
                Err(e) => {
                    log::error!("fold {index} {label}: {e}");
                    FoldRow::failed(label, index, fold.test.len(), e.to_string())
                }
            }
        })
        .collect()
}

/// Runs every method on every fold. Folds run in parallel; the report is
/// ordered by fold, then by method as listed.
pub fn run_experiment(dataset: &RatingsDataset, spec: &ExperimentSpec) -> Result<RunReport> {
    spec.validate(dataset)?;
    let splits = kfold(dataset, spec.n_folds, spec.seed)?;
    let per_fold: Vec<Vec<FoldRow>> = splits.into_par_iter().map(|s| evaluate_fold(s, spec)).collect();
    Ok(RunReport::new(spec, per_fold.into_iter().flatten().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_and_violations() {
        let m = Method::Joint {
            n_clusters: 2,
            top_r: 3,
        };
        assert_eq!(m.label(), "joint(z=2,R=3)");
        assert!(m.violations(10, 10)[0].contains("R must satisfy"));
        assert!(!Method::Cluster {
            n_clusters: 11,
            bloom: false
        }
        .violations(10, 10)
        .is_empty());
        assert!(Method::Naive.violations(10, 10).is_empty());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = ExperimentSpec {
            methods: vec![
                Method::Naive,
                Method::Cluster {
                    n_clusters: 10,
                    bloom: true,
                },
                Method::Dp(DPConfig::default()),
                Method::Obfuscation(ObfuscationConfig::default()),
            ],
            ..ExperimentSpec::default()
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentSpec>(&json).unwrap(), spec);
        assert_eq!(spec.n_prime(), 50);
    }
}
