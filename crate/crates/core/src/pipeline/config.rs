//! The TOML pipeline configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classic::LogisticConfig;
use crate::error::{Error, Result};
use crate::featurize::{FeatureSet, Task};
use crate::ingest::ColumnMap;
use crate::neural::TrainConfig;
use crate::synth::SynthConfig;
use crate::trees::{ForestConfig, TreeConfig};
use crate::tuning::SearchConfig;

/// Learner families selectable with `--model`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Logreg,
    Nb,
    Dt,
    Rf,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Linear,
        ModelKind::Logreg,
        ModelKind::Nb,
        ModelKind::Dt,
        ModelKind::Rf,
        ModelKind::Mlp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Logreg => "logreg",
            ModelKind::Nb => "nb",
            ModelKind::Dt => "dt",
            ModelKind::Rf => "rf",
            ModelKind::Mlp => "mlp",
        }
    }

    pub fn supports(self, task: Task) -> bool {
        match self {
            ModelKind::Linear => task == Task::Regression,
            ModelKind::Logreg => task == Task::Binary,
            ModelKind::Nb | ModelKind::Mlp => task != Task::Regression,
            ModelKind::Dt | ModelKind::Rf => true,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model `{s}` (linear|logreg|nb|dt|rf|mlp)")))
    }
}

/// Every key is optional; see the README for defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub feature_set: FeatureSet,
    pub task: Task,
    pub model: ModelKind,
    pub test_fraction: f64,
    /// Share of the held-out rows moved to a validation split (0 disables).
    pub validation_fraction: f64,
    /// Keep each label's share equal in train and held-out rows.
    pub stratify: bool,
    /// Apply balanced class weights to logistic regression and single trees.
    pub balanced: bool,
    /// Standardise features on the training rows before fitting.
    pub scale: bool,
    pub output_dir: PathBuf,
    pub columns: ColumnMap,
    pub tree: TreeConfig,
    pub forest: ForestConfig,
    pub logistic: LogisticConfig,
    pub mlp: TrainConfig,
    pub search: SearchConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            feature_set: FeatureSet::Exact,
            task: Task::Binary,
            model: ModelKind::Rf,
            test_fraction: 0.2,
            validation_fraction: 0.0,
            stratify: false,
            balanced: true,
            scale: true,
            output_dir: PathBuf::from("out"),
            columns: ColumnMap::default(),
            tree: TreeConfig::default(),
            forest: ForestConfig::default(),
            logistic: LogisticConfig::default(),
            mlp: TrainConfig::default(),
            search: SearchConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction {} not in (0, 1)",
                self.test_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction {} not in [0, 1)",
                self.validation_fraction
            )));
        }
        if !self.model.supports(self.task) {
            return Err(Error::Config(format!(
                "model `{}` does not support task `{}`",
                self.model, self.task
            )));
        }
        self.tree.validate()?;
        self.forest.validate()?;
        self.mlp.validate()?;
        self.search.space.validate()?;
        self.synth.validate()?;
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))[..16].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: PipelineConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn nested_keys_parse() {
        let cfg: PipelineConfig = toml::from_str(
            r#"
            seed = 7
            feature_set = "grid2"
            model = "dt"
            task = "multiclass"
            [forest]
            n_estimators = 10
            [tree]
            criterion = "entropy"
            max_depth = 5
            [search.space]
            n_estimators = [10, 20]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.feature_set, FeatureSet::Grid2);
        assert_eq!(cfg.forest.n_estimators, 10);
        assert_eq!(cfg.tree.max_depth, Some(5));
        assert_eq!(cfg.search.space.n_estimators, vec![10, 20]);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(toml::from_str::<PipelineConfig>("frobnicate = 1").is_err());
    }

    #[test]
    fn incompatible_model_rejected() {
        let cfg = PipelineConfig {
            model: ModelKind::Linear,
            task: Task::Binary,
            ..PipelineConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_is_stable() {
        let a = PipelineConfig::default();
        assert_eq!(a.hash(), PipelineConfig::default().hash());
        let b = PipelineConfig {
            seed: 1,
            ..PipelineConfig::default()
        };
        assert_ne!(a.hash(), b.hash());
    }
}
