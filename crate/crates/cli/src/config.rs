//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sp2::baselines::{DPConfig, ObfuscationConfig};
use sp2::device::ClusterScoring;
use sp2::eval::{ExperimentSpec, Method};
use sp2::ingest::{ColumnSpec, Format};
use sp2::privacy::{BetaConfig, BetaLabel, Hypothesis};
use sp2::{Hyperparams, RatingsDataset};

/// Concentration `alpha + beta` of the mean-matched beta used by sweeps.
pub const DEFAULT_CONCENTRATION: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    /// Inferred from the file extension when absent.
    pub format: Option<Format>,
    /// `[min, max]` rating scale; inferred from the data when absent.
    pub scale: Option<[f64; 2]>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            path: PathBuf::from("data/ml-100k/u.data"),
            format: None,
            scale: None,
        }
    }
}

impl DatasetConfig {
    pub fn format(&self) -> Format {
        self.format.unwrap_or_else(|| Format::from_path(&self.path))
    }

    pub fn columns(&self) -> ColumnSpec {
        ColumnSpec {
            scale: self.scale.map(|[lo, hi]| (lo, hi)),
            ..ColumnSpec::for_format(self.format())
        }
    }
}

/// A beta configuration: one of the four named ones or explicit shapes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaChoice {
    Named(BetaLabel),
    Shapes { alpha: f64, beta: f64 },
}

impl BetaChoice {
    pub fn resolve(&self) -> Result<BetaConfig, String> {
        match *self {
            BetaChoice::Named(label) => {
                BetaConfig::from_label(label).ok_or_else(|| format!("{label:?} is not a named beta configuration"))
            }
            BetaChoice::Shapes { alpha, beta } => Ok(BetaConfig::custom(alpha, beta)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Cluster counts K; joint runs use z = K.
    pub clusters: Vec<usize>,
    pub top_r: usize,
    pub joint: bool,
    pub bloom: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            clusters: vec![10, 50, 100, 200, 400, 800],
            top_r: 3,
            joint: true,
            bloom: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Target mean privacy ratios.
    pub ratios: Vec<f64>,
    pub concentration: f64,
    /// Methods for the sweep; the top-level list when absent.
    pub methods: Option<Vec<Method>>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            ratios: vec![0.0, 0.17, 0.5, 0.83],
            concentration: DEFAULT_CONCENTRATION,
            methods: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_folds: usize,
    pub out: PathBuf,
    pub hypotheses: Vec<Hypothesis>,
    pub betas: Vec<BetaChoice>,
    pub device_epochs: Option<usize>,
    pub cluster_scoring: ClusterScoring,
    pub clamp_predictions: bool,
    pub top_n: usize,
    pub n_prime: Option<usize>,
    pub dataset: DatasetConfig,
    pub hyperparams: Hyperparams,
    pub methods: Vec<Method>,
    pub ablation: AblationConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let spec = ExperimentSpec::default();
        ExperimentConfig {
            seed: spec.seed,
            n_folds: spec.n_folds,
            out: PathBuf::from("results"),
            hypotheses: vec![Hypothesis::H1],
            betas: vec![BetaChoice::Named(BetaLabel::Balanced)],
            device_epochs: spec.device_epochs,
            cluster_scoring: spec.cluster_scoring,
            clamp_predictions: spec.clamp_predictions,
            top_n: spec.top_n,
            n_prime: spec.n_prime,
            dataset: DatasetConfig::default(),
            hyperparams: spec.hyperparams,
            methods: spec.methods,
            ablation: AblationConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

/// One (hypothesis, beta) point of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPoint {
    pub name: String,
    pub spec: ExperimentSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    /// The defaults with one instance of every method kind.
    pub fn example() -> Self {
        ExperimentConfig {
            methods: vec![
                Method::AbsOptimistic,
                Method::AbsPessimistic,
                Method::OnlyPublic,
                Method::Naive,
                Method::Cluster {
                    n_clusters: 400,
                    bloom: false,
                },
                Method::Joint {
                    n_clusters: 50,
                    top_r: 3,
                },
                Method::Dp(DPConfig::default()),
                Method::Obfuscation(ObfuscationConfig::default()),
            ],
            ..ExperimentConfig::default()
        }
    }

    /// The [`ExperimentSpec`] shared by every point, with the given privacy setting.
    pub fn spec(&self, hypothesis: Hypothesis, beta: BetaConfig, methods: Vec<Method>) -> ExperimentSpec {
        ExperimentSpec {
            n_folds: self.n_folds,
            seed: self.seed,
            hypothesis,
            beta,
            methods,
            hyperparams: self.hyperparams,
            device_epochs: self.device_epochs,
            cluster_scoring: self.cluster_scoring,
            clamp_predictions: self.clamp_predictions,
            top_n: self.top_n,
            n_prime: self.n_prime,
            fixed_ratio: None,
        }
    }

    /// The cross product of hypotheses and beta configurations. Betas that do
    /// not resolve are reported by [`ExperimentConfig::violations`].
    pub fn run_points(&self) -> Vec<RunPoint> {
        let mut out = Vec::new();
        for &h in &self.hypotheses {
            for choice in &self.betas {
                let Ok(beta) = choice.resolve() else { continue };
                out.push(RunPoint {
                    name: point_name(h, &beta),
                    spec: self.spec(h, beta, self.methods.clone()),
                });
            }
        }
        out
    }

    pub fn sweep_methods(&self) -> Vec<Method> {
        self.sweep.methods.clone().unwrap_or_else(|| self.methods.clone())
    }

    /// Sweep points: ratios 0 and 1 use a fixed ratio, the rest a beta with
    /// the target mean and the configured concentration.
    pub fn sweep_points(&self) -> Vec<(f64, ExperimentSpec)> {
        let h = self.hypotheses.first().copied().unwrap_or(Hypothesis::H1);
        self.sweep
            .ratios
            .iter()
            .map(|&r| {
                let mut spec = self.spec(
                    h,
                    BetaConfig::with_mean(r, self.sweep.concentration),
                    self.sweep_methods(),
                );
                if r <= 0.0 || r >= 1.0 {
                    spec.fixed_ratio = Some(r);
                }
                (r, spec)
            })
            .collect()
    }

    /// The first run point, used by the ablation.
    pub fn ablation_base(&self) -> Option<RunPoint> {
        self.run_points().into_iter().next()
    }

    /// Methods for one ablation cluster count.
    pub fn ablation_methods(&self, k: usize) -> Vec<Method> {
        let mut m = vec![Method::Cluster {
            n_clusters: k,
            bloom: self.ablation.bloom,
        }];
        if self.ablation.joint {
            m.push(Method::Joint {
                n_clusters: k,
                top_r: self.ablation.top_r.min(k),
            });
        }
        m
    }

    /// Every static violation that matters to `scope`. With a dataset the
    /// limits it sets (folds, K, peers) are checked too.
    pub fn violations(&self, scope: Scope, dataset: Option<&RatingsDataset>) -> Vec<String> {
        let mut out = Vec::new();
        if self.hypotheses.is_empty() {
            out.push("hypotheses: at least one is required".to_owned());
        }
        if self.betas.is_empty() {
            out.push("betas: at least one is required".to_owned());
        }
        for choice in &self.betas {
            if let Err(e) = choice.resolve().and_then(|b| b.validate().map_err(|e| e.to_string())) {
                out.push(format!("betas: {e}"));
            }
        }
        if let Some([lo, hi]) = self.dataset.scale {
            if !(lo < hi) {
                out.push(format!("dataset.scale: [{lo}, {hi}] is not an increasing range"));
            }
        }
        let check = |methods: Vec<Method>| {
            let spec = self.spec(Hypothesis::H1, BetaConfig::BALANCED, methods);
            match dataset {
                Some(ds) => spec.violations(ds),
                None => spec.violations_without_data(),
            }
        };
        match scope {
            Scope::Run => out.extend(check(self.methods.clone())),
            Scope::Prepare => out.extend(check(vec![Method::OnlyPublic])),
            Scope::Sweep => {
                out.extend(check(self.sweep_methods()));
                for &r in &self.sweep.ratios {
                    if !(0.0..=1.0).contains(&r) {
                        out.push(format!("sweep.ratios: {r} must lie in [0, 1]"));
                    }
                }
                if self.sweep.ratios.is_empty() {
                    out.push("sweep.ratios: at least one ratio is required".to_owned());
                }
                if !(self.sweep.concentration > 0.0) || !self.sweep.concentration.is_finite() {
                    out.push("sweep.concentration must be positive".to_owned());
                }
            }
            Scope::Ablation => {
                out.extend(check(vec![Method::OnlyPublic]));
                if self.ablation.clusters.is_empty() {
                    out.push("ablation.clusters: at least one K is required".to_owned());
                }
                if self.ablation.top_r < 1 {
                    out.push("ablation.top_r must be at least 1".to_owned());
                }
                for &k in &self.ablation.clusters {
                    if k < 1 {
                        out.push("ablation.clusters: K must be at least 1".to_owned());
                    } else if let Some(ds) = dataset {
                        if k > ds.n_items() {
                            out.push(format!("ablation.clusters: K = {k} exceeds the {} items", ds.n_items()));
                        }
                    }
                }
            }
        }
        out
    }
}

/// Which command a configuration is validated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Run,
    Ablation,
    Sweep,
    Prepare,
}

pub fn point_name(h: Hypothesis, beta: &BetaConfig) -> String {
    let h = format!("{h:?}").to_lowercase();
    match beta.label {
        BetaLabel::Custom => format!("{h}_a{}_b{}", beta.alpha, beta.beta),
        label => format!("{h}_{}", format!("{label:?}").to_lowercase()),
    }
}
