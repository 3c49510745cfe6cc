//! The versioned JSON model artifact.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::config::{ModelKind, PipelineConfig};
use super::write_atomic;
use crate::classic::{LinearModel, LogisticModel, NaiveBayesModel};
use crate::error::{Error, Result};
use crate::featurize::{FeatureSet, Scaler, Task, Vocabulary};
use crate::neural::MlpModel;
use crate::trees::{argmax, DecisionTree, ForestMode, ForestModel};

pub const SCHEMA_VERSION: u64 = 1;

/// Fitted parameters of one learner family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_type", content = "params", rename_all = "lowercase")]
pub enum ModelPayload {
    Linear(LinearModel),
    Logreg(LogisticModel),
    Nb(NaiveBayesModel),
    Dt(DecisionTree),
    Rf(ForestModel),
    Mlp(MlpModel),
}

/// Model output for a batch of rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    /// `proba` columns follow `classes`.
    Classes {
        classes: Vec<u32>,
        labels: Vec<u32>,
        proba: Array2<f64>,
    },
    Values(Vec<f64>),
}

fn from_proba(classes: Vec<u32>, proba: Array2<f64>) -> Predictions {
    let labels = proba.rows().into_iter().map(|r| classes[argmax(&r.to_vec())]).collect();
    Predictions::Classes { classes, labels, proba }
}

impl ModelPayload {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelPayload::Linear(_) => ModelKind::Linear,
            ModelPayload::Logreg(_) => ModelKind::Logreg,
            ModelPayload::Nb(_) => ModelKind::Nb,
            ModelPayload::Dt(_) => ModelKind::Dt,
            ModelPayload::Rf(_) => ModelKind::Rf,
            ModelPayload::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Predictions> {
        Ok(match self {
            ModelPayload::Linear(m) => Predictions::Values(m.predict(x)?),
            ModelPayload::Logreg(m) => {
                let p = m.predict_proba(x)?;
                let proba = Array2::from_shape_fn((p.len(), 2), |(i, j)| if j == 1 { p[i] } else { 1.0 - p[i] });
                from_proba(vec![0, 1], proba)
            }
            ModelPayload::Nb(m) => from_proba(m.classes.clone(), m.predict_proba(x)?),
            ModelPayload::Dt(m) if m.is_regression() => Predictions::Values(m.predict_values(x)?),
            ModelPayload::Dt(m) => from_proba(m.classes.clone(), m.predict_proba(x)?),
            ModelPayload::Rf(m) if m.mode == ForestMode::Regress => Predictions::Values(m.predict_values(x)?),
            ModelPayload::Rf(m) => from_proba(m.classes.clone(), m.predict_proba(x)?),
            ModelPayload::Mlp(m) => from_proba(m.classes.clone(), m.predict_proba(x)?),
        })
    }
}

/// Provenance of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingEcho {
    pub config_hash: String,
    pub train_rows: usize,
    pub config: PipelineConfig,
}

/// Identifies the feature table a model was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataFingerprint {
    pub rows: usize,
    /// Hex SHA-256 of the feature table's CSV serialization.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArtifact {
    pub schema_version: u64,
    pub task: Task,
    pub feature_set: FeatureSet,
    pub feature_names: Vec<String>,
    pub scaler: Scaler,
    pub vocabulary: Vocabulary,
    pub model: ModelPayload,
    pub training: TrainingEcho,
    pub data: DataFingerprint,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: Option<u64>,
}

fn artifact_error(file: &Path, field: &str, message: impl std::fmt::Display) -> Error {
    Error::Artifact {
        path: field.to_string(),
        message: format!("{}: {message}", file.display()),
    }
}

impl ModelArtifact {
    /// Scales `x` and runs the model.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Predictions> {
        if x.ncols() != self.feature_names.len() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_names.len(),
                got: x.ncols(),
            });
        }
        let scaled = self.scaler.transform(x)?;
        self.model.predict(scaled.view())
    }

    pub fn to_writer<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer(out, self)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| self.to_writer(w))
    }

    /// Parses an artifact. The version is checked before the payload, so
    /// files from other schema versions fail with a version error rather
    /// than a field error. `path` only labels error messages.
    pub fn from_slice(bytes: &[u8], path: &Path) -> Result<ModelArtifact> {
        let mut de = serde_json::Deserializer::from_slice(bytes);
        de.disable_recursion_limit();
        let probe = VersionProbe::deserialize(&mut de).map_err(|e| artifact_error(path, ".", e))?;
        match probe.schema_version {
            None => return Err(artifact_error(path, "schema_version", "missing field")),
            Some(v) if v != SCHEMA_VERSION => {
                return Err(Error::SchemaVersion {
                    found: v,
                    expected: SCHEMA_VERSION,
                })
            }
            Some(_) => {}
        }
        let mut de = serde_json::Deserializer::from_slice(bytes);
        de.disable_recursion_limit();
        let artifact: ModelArtifact = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| artifact_error(path, &e.path().to_string(), e.inner()))?;
        de.end().map_err(|e| artifact_error(path, ".", e))?;
        artifact
            .check_consistency()
            .map_err(|(field, m)| artifact_error(path, field, m))?;
        Ok(artifact)
    }

    pub fn load(path: &Path) -> Result<ModelArtifact> {
        let bytes = std::fs::read(path)?;
        Self::from_slice(&bytes, path)
    }

    fn check_consistency(&self) -> std::result::Result<(), (&'static str, String)> {
        let expected: Vec<&str> = self.feature_set.feature_names();
        if self.feature_names != expected {
            return Err((
                "feature_names",
                format!(
                    "feature_names {:?} do not match feature set `{}`",
                    self.feature_names, self.feature_set
                ),
            ));
        }
        if self.scaler.n_features() != expected.len() {
            return Err((
                "scaler",
                format!("{} features, expected {}", self.scaler.n_features(), expected.len()),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::Scaler;
    use crate::pipeline::PipelineConfig;

    fn artifact() -> ModelArtifact {
        let fs = FeatureSet::Citywide;
        ModelArtifact {
            schema_version: SCHEMA_VERSION,
            task: Task::Regression,
            feature_set: fs,
            feature_names: fs.feature_names().into_iter().map(String::from).collect(),
            scaler: Scaler::identity(3),
            vocabulary: Vocabulary::build(["a", "b", "a"]),
            model: ModelPayload::Linear(LinearModel {
                weights: vec![0.1, -0.2, 0.3],
                intercept: 1.5,
            }),
            training: TrainingEcho {
                config_hash: "x".into(),
                train_rows: 3,
                config: PipelineConfig::default(),
            },
            data: DataFingerprint {
                rows: 3,
                sha256: "00".into(),
            },
        }
    }

    fn to_bytes(a: &ModelArtifact) -> Vec<u8> {
        let mut buf = Vec::new();
        a.to_writer(&mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip() {
        let a = artifact();
        let back = ModelArtifact::from_slice(&to_bytes(&a), Path::new("m.json")).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn payload_is_tagged() {
        let v: serde_json::Value = serde_json::from_slice(&to_bytes(&artifact())).unwrap();
        assert_eq!(v["model"]["model_type"], "linear");
        assert!(v["model"]["params"]["weights"].is_array());
    }

    #[test]
    fn version_gate() {
        let mut v: serde_json::Value = serde_json::from_slice(&to_bytes(&artifact())).unwrap();
        v["schema_version"] = 999.into();
        let err = ModelArtifact::from_slice(v.to_string().as_bytes(), Path::new("m.json")).unwrap_err();
        assert!(matches!(err, Error::SchemaVersion { found: 999, .. }), "{err}");
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let bytes = to_bytes(&artifact());
        let err = ModelArtifact::from_slice(&bytes[..bytes.len() / 2], Path::new("m.json")).unwrap_err();
        assert!(matches!(err, Error::Artifact { .. }), "{err}");
    }

    #[test]
    fn bad_field_reports_path() {
        let mut v: serde_json::Value = serde_json::from_slice(&to_bytes(&artifact())).unwrap();
        v["model"]["params"]["intercept"] = "oops".into();
        let err = ModelArtifact::from_slice(v.to_string().as_bytes(), Path::new("m.json")).unwrap_err();
        assert!(
            matches!(&err, Error::Artifact { path, .. } if path == "model.params.intercept"),
            "{err}"
        );
    }

    #[test]
    fn deep_trees_load() {
        use crate::trees::{TreeConfig, TreeNode};
        let mut node = TreeNode::Leaf {
            histogram: vec![1.0, 0.0],
            samples: 1,
        };
        for i in 0..400 {
            node = TreeNode::Split {
                feature: 0,
                threshold: i as f64,
                left: Box::new(node),
                right: Box::new(TreeNode::Leaf {
                    histogram: vec![0.0, 1.0],
                    samples: 1,
                }),
            };
        }
        let mut a = artifact();
        a.task = Task::Binary;
        a.model = ModelPayload::Dt(DecisionTree {
            root: node,
            classes: vec![0, 1],
            n_features: 3,
            config: TreeConfig::default(),
        });
        let back = ModelArtifact::from_slice(&to_bytes(&a), Path::new("m.json")).unwrap();
        assert_eq!(a, back);
    }
}
