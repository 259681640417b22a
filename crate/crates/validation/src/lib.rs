//! Dataset-agnostic acceptance checks for the sp2 pipeline, plus a generator
//! for sparse marketplace-style rating files.

use std::collections::HashSet;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal};
use sp2::eval::experiment::{run_method, FoldCache};
use sp2::eval::{ExperimentSpec, FoldData, Method, RunReport};
use sp2::ingest::{kfold, FoldSplit};
use sp2::privacy::{allocate, BetaConfig, Hypothesis, PrivacyPartition};
use sp2::{RatingsDataset, Result};

/// Result of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub criterion: u32,
    pub pass: bool,
    pub details: Vec<String>,
}

impl Outcome {
    pub fn new(criterion: u32, failures: &[String], details: Vec<String>) -> Self {
        let mut all = details;
        all.extend(failures.iter().map(|f| format!("violation: {f}")));
        Outcome {
            criterion,
            pass: failures.is_empty(),
            details: all,
        }
    }

    pub fn line(&self) -> String {
        format!("criterion {}: {}", self.criterion, if self.pass { "PASS" } else { "FAIL" })
    }
}

fn mean_of(report: &RunReport, method: &str) -> Option<(f64, f64)> {
    report
        .summary(method)
        .filter(|s| s.failed_folds == 0)
        .map(|s| (s.rmse_mean, s.ndcg_mean))
}

/// Label of a (hypothesis, beta) point, e.g. `H1(2,2)`.
pub fn point_label(report: &RunReport) -> String {
    format!("{:?}({},{})", report.hypothesis, report.alpha, report.beta)
}

/// Violations of abs_optimistic <= naive <= only_public <= abs_pessimistic
/// (fold-mean RMSE) and naive >= only_public (fold-mean NDCG@10).
pub fn chain_violations(report: &RunReport) -> Vec<String> {
    let label = point_label(report);
    let get = |m: &str| mean_of(report, m);
    let (Some(opt), Some(naive), Some(public), Some(pess)) = (
        get("abs_optimistic"),
        get("naive"),
        get("only_public"),
        get("abs_pessimistic"),
    ) else {
        return vec![format!("{label}: a chain method is missing or failed")];
    };
    let mut out = Vec::new();
    let steps = [
        ("abs_optimistic", opt.0, "naive", naive.0),
        ("naive", naive.0, "only_public", public.0),
        ("only_public", public.0, "abs_pessimistic", pess.0),
    ];
    for (a, x, b, y) in steps {
        if x > y {
            out.push(format!("{label}: RMSE {a} {x:.6} > {b} {y:.6}"));
        }
    }
    if naive.1 < public.1 {
        out.push(format!(
            "{label}: NDCG@10 naive {:.6} < only_public {:.6}",
            naive.1, public.1
        ));
    }
    out
}

/// One summary line with the chain's fold means.
pub fn chain_summary(report: &RunReport) -> String {
    let r = |m: &str| mean_of(report, m).map_or(f64::NAN, |v| v.0);
    let n = |m: &str| mean_of(report, m).map_or(f64::NAN, |v| v.1);
    format!(
        "{}: RMSE opt {:.4} naive {:.4} public {:.4} pess {:.4}; NDCG naive {:.4} public {:.4}",
        point_label(report),
        r("abs_optimistic"),
        r("naive"),
        r("only_public"),
        r("abs_pessimistic"),
        n("naive"),
        n("only_public"),
    )
}

/// Violations of naive <= cluster(K) <= only_public (fold-mean RMSE) for
/// every `K` in `ks`, plus one line per K for the record.
pub fn sandwich(report: &RunReport, ks: &[usize]) -> (Vec<String>, Vec<String>) {
    let label = point_label(report);
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    let (Some(naive), Some(public)) = (mean_of(report, "naive"), mean_of(report, "only_public")) else {
        return (vec![format!("{label}: naive or only_public missing")], lines);
    };
    for &k in ks {
        let m = Method::Cluster {
            n_clusters: k,
            bloom: false,
        };
        match mean_of(report, &m.label()) {
            Some((c, _)) => {
                let ok = naive.0 <= c && c <= public.0;
                lines.push(format!(
                    "{label} K={k}: naive {:.6} <= cluster {c:.6} <= only_public {:.6} {}",
                    naive.0,
                    public.0,
                    if ok { "holds" } else { "does not hold" }
                ));
                if !ok {
                    failures.push(format!("{label}: cluster K={k} RMSE {c:.6} outside [{:.6}, {:.6}]", naive.0, public.0));
                }
            }
            None => failures.push(format!("{label}: cluster K={k} missing or failed")),
        }
    }
    (failures, lines)
}

/// Runs naive and cluster(K = n_items) on every fold of `spec` and compares
/// the predictions bit for bit.
pub fn singleton_equivalence(dataset: &RatingsDataset, spec: &ExperimentSpec) -> Result<Vec<String>> {
    let cluster = Method::Cluster {
        n_clusters: dataset.n_items(),
        bloom: false,
    };
    let mut out = Vec::new();
    for split in kfold(dataset, spec.n_folds, spec.seed)? {
        let fold = FoldData::prepare(split, spec)?;
        let mut cache = FoldCache::default();
        let a = run_method(&fold, &Method::Naive, spec, &mut cache)?.predictions;
        let b = run_method(&fold, &cluster, spec, &mut cache)?.predictions;
        let differing = a.iter().zip(&b).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
        if differing > 0 {
            out.push(format!(
                "fold {}: {differing} of {} predictions differ between naive and cluster(K={})",
                fold.index,
                a.len(),
                dataset.n_items()
            ));
        }
    }
    Ok(out)
}

/// Settings for the private-set perturbation trials.
#[derive(Debug, Clone)]
pub struct DigestTrials {
    pub trials: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub spec: ExperimentSpec,
}

/// Fixes one public partition of the first fold and reruns every method with
/// `trials` different private sets: a random subset of the original private
/// ratings with fresh values. Every method's server digest must be the same
/// across trials, and the device predictions must change at least once
/// (otherwise the private data never reached the devices).
pub fn digest_trials(dataset: &RatingsDataset, cfg: &DigestTrials) -> Result<(Vec<String>, Vec<String>)> {
    let split = kfold(dataset, cfg.spec.n_folds, cfg.seed)?.remove(0);
    let base = allocate(&split.train, Hypothesis::H1, &BetaConfig::BALANCED, cfg.seed)?;
    let (lo, hi) = dataset.scale();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut digests: Vec<HashSet<String>> = vec![HashSet::new(); cfg.methods.len()];
    let mut predictions: Vec<HashSet<Vec<u64>>> = vec![HashSet::new(); cfg.methods.len()];
    let mut private_sizes = HashSet::new();
    for _ in 0..cfg.trials {
        let keep = rng.random_range(0.3..1.0);
        let mut private_per_user = vec![Vec::new(); base.private_per_user.len()];
        for (u, rs) in base.private_per_user.iter().enumerate() {
            for r in rs {
                if rng.random::<f64>() < keep {
                    let step = rng.random_range(0..=4u32);
                    let value = lo + (hi - lo) * f64::from(step) / 4.0;
                    private_per_user[u].push(sp2::Rating::new(r.user, r.item, value));
                }
            }
        }
        private_sizes.insert(private_per_user.iter().map(Vec::len).sum::<usize>());
        let mut train = base.public.ratings().to_vec();
        train.extend(private_per_user.iter().flatten().copied());
        let trial_split = FoldSplit {
            fold_index: split.fold_index,
            train: split.train.with_ratings(train),
            test: split.test.clone(),
        };
        let partition = PrivacyPartition {
            public: base.public.clone(),
            private_per_user,
            ratios: base.ratios.clone(),
            hypothesis: Hypothesis::H1,
        };
        let fold = FoldData::with_partition(trial_split, partition)?;
        let mut cache = FoldCache::default();
        for (m, method) in cfg.methods.iter().enumerate() {
            let out = run_method(&fold, method, &cfg.spec, &mut cache)?;
            digests[m].insert(out.server_digest.unwrap_or_default());
            predictions[m].insert(out.predictions.iter().map(|p| p.to_bits()).collect());
        }
    }

    let mut failures = Vec::new();
    let mut lines = vec![format!(
        "{} trials, {} distinct private-set sizes",
        cfg.trials,
        private_sizes.len()
    )];
    for (m, method) in cfg.methods.iter().enumerate() {
        lines.push(format!(
            "{}: {} distinct server digest(s), {} distinct prediction vectors",
            method.label(),
            digests[m].len(),
            predictions[m].len()
        ));
        if digests[m].len() != 1 || digests[m].contains("") {
            failures.push(format!("{}: server digest depends on private data", method.label()));
        }
        if predictions[m].len() < 2 {
            failures.push(format!("{}: predictions ignore the private data", method.label()));
        }
    }
    Ok((failures, lines))
}

/// Shape of a synthetic marketplace rating file: many light users, a long
/// popularity tail and ratings skewed towards the top of a 1..5 scale.
#[derive(Debug, Clone, Copy)]
pub struct MarketplaceShape {
    pub users: usize,
    pub items: usize,
    /// Every user rates at least this many items...
    pub min_per_user: usize,
    /// ...plus a geometric number with this success probability.
    pub extra_p: f64,
}

impl Default for MarketplaceShape {
    fn default() -> Self {
        MarketplaceShape {
            users: 4000,
            items: 1500,
            min_per_user: 3,
            extra_p: 0.2,
        }
    }
}

/// Writes `user_id,item_id,rating,timestamp` rows with a header and returns
/// the number of ratings written.
pub fn write_marketplace_csv(path: &Path, shape: MarketplaceShape, seed: u64) -> std::result::Result<usize, csv::Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let extra = Geometric::new(shape.extra_p).expect("valid geometric probability");
    let rank = 4;
    let popularity = WeightedIndex::new((0..shape.items).map(|r| 1.0 / (r as f64 + 5.0).powf(0.9)))
        .expect("positive weights");
    let latent = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..rank).map(|_| normal.sample(rng) * 0.5).collect()).collect()
    };
    let user_vecs = latent(&mut rng, shape.users);
    let item_vecs = latent(&mut rng, shape.items);
    let user_bias: Vec<f64> = (0..shape.users).map(|_| normal.sample(&mut rng) * 0.4).collect();
    let item_bias: Vec<f64> = (0..shape.items).map(|_| normal.sample(&mut rng) * 0.4).collect();

    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["user_id", "item_id", "rating", "timestamp"])?;
    let mut written = 0;
    for u in 0..shape.users {
        let want = (shape.min_per_user + extra.sample(&mut rng) as usize).min(shape.items);
        let mut items = HashSet::new();
        while items.len() < want {
            items.insert(popularity.sample(&mut rng));
        }
        let mut items: Vec<usize> = items.into_iter().collect();
        items.sort_unstable();
        for i in items {
            let dot: f64 = user_vecs[u].iter().zip(&item_vecs[i]).map(|(a, b)| a * b).sum();
            let raw = 4.1 + user_bias[u] + item_bias[i] + 1.5 * dot + 0.6 * normal.sample(&mut rng);
            let rating = raw.round().clamp(1.0, 5.0);
            let ts = 1_300_000_000u64 + rng.random_range(0..200_000_000u64);
            w.write_record([
                format!("A{:012X}", 0x5EED_0000_0000u64 + u as u64 * 7919),
                format!("B00{:07}", i * 37 + 1000),
                format!("{rating:.1}"),
                ts.to_string(),
            ])?;
            written += 1;
        }
    }
    w.flush()?;
    Ok(written)
}
