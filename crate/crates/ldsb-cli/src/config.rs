//! Experiment configuration: JSON schema, presets, and hashing.

use ldsb::analysis::ProjectorOptConfig;
use ldsb::datasets::{CollagePattern, IfmSpec};
use ldsb::model::Regime;
use ldsb::orthop::RankSpec;
use ldsb::training::TrainConfig;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Ifm,
    CollageXor,
    CollageSphere,
}

impl DatasetKind {
    pub fn pattern(self) -> Option<CollagePattern> {
        match self {
            DatasetKind::Ifm => None,
            DatasetKind::CollageXor => Some(CollagePattern::Xor),
            DatasetKind::CollageSphere => Some(CollagePattern::Sphere),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub d: usize,
    pub gamma: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub num_nonlinear: usize,
    pub num_noise: usize,
}

impl DatasetConfig {
    pub fn spec(&self, seed: u64) -> IfmSpec {
        IfmSpec {
            d: self.d,
            gamma: self.gamma,
            n_train: self.n_train,
            n_val: self.n_val,
            n_test: self.n_test,
            num_nonlinear: self.num_nonlinear,
            num_noise: self.num_noise,
            seed,
        }
    }

    fn from_spec(spec: &IfmSpec, kind: DatasetKind) -> Self {
        Self {
            kind,
            d: spec.d,
            gamma: spec.gamma,
            n_train: spec.n_train,
            n_val: spec.n_val,
            n_test: spec.n_test,
            num_nonlinear: spec.num_nonlinear,
            num_noise: spec.num_noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeConfig {
    pub rank: String,
    pub lambda: f64,
    /// Mixing pairs are `pairs_factor × n` samples with replacement.
    pub pairs_factor: usize,
    pub opt: ProjectorOptConfig,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self { rank: "1".into(), lambda: 1.0, pairs_factor: 10, opt: Default::default() }
    }
}

impl AnalyzeConfig {
    pub fn rank_spec(&self) -> Result<RankSpec, CliError> {
        self.rank
            .parse()
            .map_err(|e| CliError::Validation(format!("{e}")))
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustnessConfig {
    pub sigmas: Vec<f64>,
    pub trials: usize,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self { sigmas: vec![0.25, 0.5, 1.0, 2.0], trials: 5 }
    }
}

/// Whole-experiment configuration; unknown JSON keys are rejected.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub regime: Regime,
    pub hidden: usize,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub analyze: AnalyzeConfig,
    #[serde(default)]
    pub robustness: RobustnessConfig,
}

impl ExperimentConfig {
    /// Named presets wiring the stock datasets to their training setups.
    pub fn preset(name: &str, master_seed: u64) -> Result<Self, CliError> {
        let (spec, pattern) = ldsb::presets::dataset_preset(name, master_seed)
            .map_err(|e| CliError::Validation(e.to_string()))?;
        let kind = match pattern {
            None => DatasetKind::Ifm,
            Some(CollagePattern::Xor) => DatasetKind::CollageXor,
            Some(CollagePattern::Sphere) => DatasetKind::CollageSphere,
        };
        let mut train = ldsb::training::presets::desk(Regime::Rich, master_seed);
        if pattern.is_some() {
            train.steps = ldsb::presets::collage_train_steps();
        }
        Ok(Self {
            master_seed,
            regime: Regime::Rich,
            hidden: ldsb::presets::HIDDEN_WIDTH,
            dataset: DatasetConfig::from_spec(&spec, kind),
            train,
            analyze: Default::default(),
            robustness: Default::default(),
        })
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("invalid config {}: {e}", path.display())))
    }

    /// Re-derives the per-stage seeds from the master seed so a rerun with
    /// the same config reproduces every numeric output exactly.
    pub fn seeded(mut self) -> Self {
        self.train.seed = self.master_seed;
        self.analyze.opt.seed = self.master_seed;
        self
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON; changes iff the config changes.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_json().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
