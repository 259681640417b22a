//! Command implementations. Every command validates its whole configuration
//! before any training starts and writes CSV, JSON and a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use sp2::eval::{run_experiment, ExperimentSpec, Method, RunReport};
use sp2::ingest::{kfold, load_tsv, write_tsv};
use sp2::privacy::allocate;
use sp2::RatingsDataset;

use crate::config::{ExperimentConfig, Scope};

#[derive(Debug)]
pub enum CliError {
    /// Static problems found before any work started.
    Invalid(Vec<String>),
    /// Failures while running.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(v) => {
                writeln!(f, "configuration has {} problem(s):", v.len())?;
                for e in v {
                    writeln!(f, "  - {e}")?;
                }
                Ok(())
            }
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<sp2::Error> for CliError {
    fn from(e: sp2::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Command-line values that override the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub clamp_predictions: bool,
}

impl Overrides {
    pub fn apply(&self, mut config: ExperimentConfig) -> ExperimentConfig {
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(o) = &self.out {
            config.out = o.clone();
        }
        if self.clamp_predictions {
            config.clamp_predictions = true;
        }
        config
    }
}

/// A validated configuration with its dataset.
#[derive(Debug)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub dataset: RatingsDataset,
    pub dataset_sha256: String,
}

/// Loads the dataset and collects every violation, with or without data.
pub fn preflight(config: ExperimentConfig, scope: Scope) -> CliResult<Prepared> {
    let mut problems = Vec::new();
    let path = &config.dataset.path;
    let loaded = if !path.exists() {
        problems.push(format!("dataset.path: {} does not exist", path.display()));
        None
    } else {
        match (fs::read(path), load_tsv(path, config.dataset.columns())) {
            (Ok(bytes), Ok(ds)) => Some((ds, sha256_hex(&bytes))),
            (Err(e), _) => {
                problems.push(format!("dataset.path: {}: {e}", path.display()));
                None
            }
            (_, Err(e)) => {
                problems.push(format!("dataset: {e}"));
                None
            }
        }
    };
    problems.extend(config.violations(scope, loaded.as_ref().map(|(ds, _)| ds)));
    if config.out.is_file() {
        problems.push(format!("out: {} is a file", config.out.display()));
    }
    match loaded {
        Some((dataset, dataset_sha256)) if problems.is_empty() => Ok(Prepared {
            config,
            dataset,
            dataset_sha256,
        }),
        _ => Err(CliError::Invalid(problems)),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files written by one command, hashed for the manifest.
struct Output {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Output {
    fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir)?;
        Ok(Output {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents)?;
        self.files.insert(name.to_owned(), sha256_hex(contents));
        Ok(())
    }

    /// Registers a file another writer put at `name`.
    fn register_file(&mut self, name: &str) -> CliResult<()> {
        let bytes = fs::read(self.dir.join(name))?;
        self.files.insert(name.to_owned(), sha256_hex(&bytes));
        Ok(())
    }

    /// Registers files another writer put under `sub`.
    fn register_tree(&mut self, sub: &str) -> CliResult<()> {
        let mut stack = vec![self.dir.join(sub)];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir)? {
                let path = entry?.path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path
                        .strip_prefix(&self.dir)
                        .expect("registered file lies under the output directory")
                        .to_string_lossy()
                        .replace('\\', "/");
                    self.files.insert(rel, sha256_hex(&fs::read(&path)?));
                }
            }
        }
        Ok(())
    }

    fn write_report(&mut self, stem: &str, report: &RunReport) -> CliResult<()> {
        self.write(&format!("{stem}.csv"), report.to_csv()?.as_bytes())?;
        self.write(&format!("{stem}.json"), report.to_json()?.as_bytes())
    }

    fn finish(mut self, command: &str, prepared: &Prepared, specs: &[(String, &ExperimentSpec)], notes: Vec<String>) -> CliResult<PathBuf> {
        let ds = &prepared.dataset;
        let points: Vec<Value> = specs
            .iter()
            .map(|(name, spec)| {
                let folds: Vec<Value> = (0..spec.n_folds)
                    .map(|f| {
                        json!({
                            "fold": f,
                            "train_seed": spec.fold_hyperparams(f).seed,
                            "privacy_seed": spec.privacy_seed(f),
                        })
                    })
                    .collect();
                json!({
                    "name": name,
                    "hypothesis": spec.hypothesis,
                    "alpha": spec.beta.alpha,
                    "beta": spec.beta.beta,
                    "fixed_ratio": spec.fixed_ratio,
                    "methods": spec.methods.iter().map(Method::label).collect::<Vec<_>>(),
                    "folds": folds,
                })
            })
            .collect();
        let manifest = json!({
            "tool": "sp2",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": prepared.config.seed,
            "config": serde_json::to_value(&prepared.config).map_err(|e| CliError::Runtime(e.to_string()))?,
            "dataset": {
                "path": prepared.config.dataset.path.to_string_lossy(),
                "sha256": prepared.dataset_sha256,
                "ratings": ds.len(),
                "users": ds.n_users(),
                "items": ds.n_items(),
                "scale": ds.scale(),
            },
            "points": points,
            "notes": notes,
            "files": std::mem::take(&mut self.files),
        });
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))? + "\n";
        fs::write(self.dir.join("manifest.json"), text)?;
        Ok(self.dir)
    }
}

fn failures(reports: &[&RunReport]) -> CliResult<()> {
    let errors: Vec<String> = reports.iter().flat_map(|r| r.errors()).collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "{} fold/method run(s) failed; reports were still written:\n  {}",
            errors.len(),
            errors.join("\n  ")
        )))
    }
}

fn run_all(dataset: &RatingsDataset, specs: &[&ExperimentSpec]) -> CliResult<Vec<RunReport>> {
    specs
        .par_iter()
        .map(|s| run_experiment(dataset, s).map_err(CliError::from))
        .collect()
}

fn summary_csv(rows: &[(Vec<String>, &RunReport)], key_headers: &[&str]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = key_headers.to_vec();
    header.extend([
        "method",
        "folds",
        "failed_folds",
        "mean_ratio",
        "rmse_mean",
        "rmse_std",
        "ndcg_mean",
        "ndcg_std",
        "aux_bytes",
    ]);
    w.write_record(&header).map_err(|e| CliError::Runtime(e.to_string()))?;
    for (keys, report) in rows {
        for s in &report.summaries {
            let mut rec = keys.clone();
            rec.extend([
                s.method.clone(),
                s.folds.to_string(),
                s.failed_folds.to_string(),
                s.mean_ratio.to_string(),
                s.rmse_mean.to_string(),
                s.rmse_std.to_string(),
                s.ndcg_mean.to_string(),
                s.ndcg_std.to_string(),
                s.aux_bytes.map(|b| b.to_string()).unwrap_or_default(),
            ]);
            w.write_record(&rec).map_err(|e| CliError::Runtime(e.to_string()))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// `run`: every method at every (hypothesis, beta) point.
pub fn cmd_run(prepared: &Prepared) -> CliResult<PathBuf> {
    let points = prepared.config.run_points();
    let specs: Vec<&ExperimentSpec> = points.iter().map(|p| &p.spec).collect();
    let reports = run_all(&prepared.dataset, &specs)?;
    let mut out = Output::new(&prepared.config.out)?;
    let mut rows = Vec::new();
    for (p, r) in points.iter().zip(&reports) {
        out.write_report(&p.name, r)?;
        rows.push((
            vec![
                p.name.clone(),
                format!("{:?}", p.spec.hypothesis),
                p.spec.beta.alpha.to_string(),
                p.spec.beta.beta.to_string(),
            ],
            r,
        ));
    }
    out.write(
        "summary.csv",
        summary_csv(&rows, &["point", "hypothesis", "alpha", "beta"])?.as_bytes(),
    )?;
    let named: Vec<(String, &ExperimentSpec)> = points.iter().map(|p| (p.name.clone(), &p.spec)).collect();
    let dir = out.finish("run", prepared, &named, Vec::new())?;
    failures(&reports.iter().collect::<Vec<_>>())?;
    Ok(dir)
}

/// `ablate-clusters`: cluster and joint methods for each K (z = K), plus the
/// naive and only-public references, at the first run point.
pub fn cmd_ablate_clusters(prepared: &Prepared) -> CliResult<PathBuf> {
    let config = &prepared.config;
    let base = config
        .ablation_base()
        .ok_or_else(|| CliError::Invalid(vec!["no (hypothesis, beta) point to ablate".to_owned()]))?;
    let reference = ExperimentSpec {
        methods: vec![Method::OnlyPublic, Method::Naive],
        ..base.spec.clone()
    };
    let mut specs = vec![("reference".to_owned(), reference)];
    for &k in &config.ablation.clusters {
        specs.push((
            format!("k{k}"),
            ExperimentSpec {
                methods: config.ablation_methods(k),
                ..base.spec.clone()
            },
        ));
    }
    let spec_refs: Vec<&ExperimentSpec> = specs.iter().map(|(_, s)| s).collect();
    let reports = run_all(&prepared.dataset, &spec_refs)?;

    let mut out = Output::new(&config.out)?;
    for ((name, _), r) in specs.iter().zip(&reports) {
        out.write_report(&format!("ablation_{name}"), r)?;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(["k", "method", "rmse", "rmse_std", "ndcg", "aux_bytes"]).map_err(err)?;
    let reference = &reports[0];
    for (i, &k) in config.ablation.clusters.iter().enumerate() {
        for s in reference.summaries.iter().chain(&reports[i + 1].summaries) {
            let kind = s.method.split('(').next().unwrap_or(&s.method).to_owned();
            w.write_record([
                k.to_string(),
                kind,
                s.rmse_mean.to_string(),
                s.rmse_std.to_string(),
                s.ndcg_mean.to_string(),
                s.aux_bytes.map(|b| b.to_string()).unwrap_or_default(),
            ])
            .map_err(err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    out.write("ablation.csv", &bytes)?;
    let named: Vec<(String, &ExperimentSpec)> = specs.iter().map(|(n, s)| (n.clone(), s)).collect();
    let dir = out.finish(
        "ablate-clusters",
        prepared,
        &named,
        vec![format!("point {}; joint uses z = K", base.name)],
    )?;
    failures(&reports.iter().collect::<Vec<_>>())?;
    Ok(dir)
}

/// `privacy-sweep`: the sweep methods at each target mean privacy ratio.
pub fn cmd_privacy_sweep(prepared: &Prepared) -> CliResult<PathBuf> {
    let config = &prepared.config;
    let points = config.sweep_points();
    let specs: Vec<&ExperimentSpec> = points.iter().map(|(_, s)| s).collect();
    let reports = run_all(&prepared.dataset, &specs)?;
    let mut out = Output::new(&config.out)?;
    let mut rows = Vec::new();
    let mut named = Vec::new();
    for ((ratio, spec), r) in points.iter().zip(&reports) {
        let name = format!("sweep_r{ratio}");
        out.write_report(&name, r)?;
        let (alpha, beta) = match spec.fixed_ratio {
            Some(_) => (String::new(), String::new()),
            None => (spec.beta.alpha.to_string(), spec.beta.beta.to_string()),
        };
        rows.push((vec![ratio.to_string(), alpha, beta], r));
        named.push((name, spec));
    }
    out.write(
        "sweep.csv",
        summary_csv(&rows, &["target_ratio", "alpha", "beta"])?.as_bytes(),
    )?;
    let notes = vec![format!(
        "ratios in (0, 1) use a beta with that mean and concentration {}; ratios 0 and 1 give every group that exact ratio",
        config.sweep.concentration
    )];
    let dir = out.finish("privacy-sweep", prepared, &named, notes)?;
    failures(&reports.iter().collect::<Vec<_>>())?;
    Ok(dir)
}

/// `prepare-data`: the normalised rating file, the fold splits and the
/// privacy partition of every fold at the first run point.
pub fn cmd_prepare_data(prepared: &Prepared) -> CliResult<PathBuf> {
    let config = &prepared.config;
    let base = config
        .ablation_base()
        .ok_or_else(|| CliError::Invalid(vec!["no (hypothesis, beta) point to prepare".to_owned()]))?;
    let spec = &base.spec;
    let mut out = Output::new(&config.out)?;
    let dir = config.out.clone();
    write_tsv(&prepared.dataset, dir.join("ratings.tsv"))?;
    out.register_file("ratings.tsv")?;
    for split in kfold(&prepared.dataset, spec.n_folds, spec.seed)? {
        let f = split.fold_index;
        let sub = format!("fold{f}");
        fs::create_dir_all(dir.join(&sub))?;
        write_tsv(&split.train, dir.join(&sub).join("train.tsv"))?;
        write_tsv(&split.test, dir.join(&sub).join("test.tsv"))?;
        let seed = spec.privacy_seed(f);
        let partition = allocate(&split.train, spec.hypothesis, &spec.beta, seed)?;
        partition.export(dir.join(&sub).join("privacy"), &spec.beta, seed)?;
        out.register_tree(&sub)?;
    }
    out.finish("prepare-data", prepared, &[(base.name.clone(), spec)], Vec::new())
}
