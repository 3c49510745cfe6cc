//! Loading, training and evaluation shared by the CLI and the report.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::Axis;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::artifact::{DataFingerprint, ModelArtifact, ModelPayload, Predictions, TrainingEcho, SCHEMA_VERSION};
use super::config::{ModelKind, PipelineConfig};
use super::{write_atomic, write_atomic_bytes};
use crate::classic::{fit_gaussian_nb, fit_linear_regression, fit_logistic_regression, mean_squared_error, r_squared};
use crate::error::{Error, Result};
use crate::eval::{
    classification_report, confusion_matrix, multiclass_ovr_roc, roc_curve, roc_svg, write_roc_csv, ClassReport,
    ConfusionMatrix, RocCurve,
};
use crate::featurize::{
    assemble_features, split_indices, stratified_split_indices, ClassWeights, FeatureSet, FeatureTable, Scaler, Task,
    Vocabulary, DANGEROUS_SITUATION, PRIORITY,
};
use crate::ingest::{parse_call_records, read_records_jsonl, ColumnMap, RawCallRecord};
use crate::neural::{init_mlp, train_mlp, EpochMetrics};
use crate::trees::{
    fit_decision_tree, fit_random_forest, fit_random_forest_regressor, fit_regression_tree, TreeConfig,
};

/// Row indices of the three partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded train/test split; `validation_fraction` of the held-out rows then
/// become a validation set and the rest stay in test.
pub fn split_rows(n: usize, test_fraction: f64, validation_fraction: f64, seed: u64) -> Result<Splits> {
    let (train, held) = split_indices(n, test_fraction, seed)?;
    carve_validation(train, held, validation_fraction)
}

/// The splits `cfg` asks for on `table`, stratified by the task's labels
/// when `cfg.stratify` is set.
pub fn config_splits(table: &FeatureTable, cfg: &PipelineConfig) -> Result<Splits> {
    if !cfg.stratify {
        return split_rows(table.n_rows(), cfg.test_fraction, cfg.validation_fraction, cfg.seed);
    }
    let (train, held) = stratified_split_indices(table.labels(cfg.task), cfg.test_fraction, cfg.seed)?;
    carve_validation(train, held, cfg.validation_fraction)
}

fn carve_validation(train: Vec<usize>, mut held: Vec<usize>, validation_fraction: f64) -> Result<Splits> {
    let n_val = ((held.len() as f64) * validation_fraction).round() as usize;
    if n_val >= held.len() && validation_fraction > 0.0 {
        return Err(Error::InvalidInput(format!(
            "validation fraction {validation_fraction} leaves no test rows out of {}",
            held.len()
        )));
    }
    let test = held.split_off(n_val);
    Ok(Splits {
        train,
        validation: held,
        test,
    })
}

/// Cleaned records from a canonical CSV or a JSONL file.
pub fn load_records(path: &Path) -> Result<Vec<RawCallRecord>> {
    let file = std::fs::File::open(path)?;
    if path.extension().is_some_and(|e| e == "jsonl") {
        return read_records_jsonl(BufReader::new(file));
    }
    let (records, stats) = parse_call_records(BufReader::new(file), &ColumnMap::canonical())?;
    if stats.total_dropped() > 0 {
        log::warn!("{}: {} rows failed validation", path.display(), stats.total_dropped());
    }
    Ok(records)
}

/// Where `featurize` stores the vocabulary for a table at `table`.
pub fn vocab_path(table: &Path) -> PathBuf {
    table.with_extension("vocab.json")
}

fn is_feature_table(path: &Path) -> Result<bool> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        return Ok(false);
    }
    let mut first = String::new();
    BufReader::new(std::fs::File::open(path)?).read_line(&mut first)?;
    let suffix = format!("{PRIORITY},{DANGEROUS_SITUATION}");
    Ok(first.trim_end().ends_with(&suffix))
}

/// Reads either a feature table written by `featurize` or cleaned records.
///
/// Records are featurized with `vocab` when given, otherwise with a
/// vocabulary built from the records themselves. A feature table must
/// already use `feature_set`.
pub fn load_table(
    path: &Path,
    feature_set: FeatureSet,
    vocab: Option<&Vocabulary>,
) -> Result<(FeatureTable, Vocabulary)> {
    if is_feature_table(path)? {
        let table = FeatureTable::read_csv(BufReader::new(std::fs::File::open(path)?))?;
        if table.feature_set() != feature_set {
            return Err(Error::InvalidInput(format!(
                "{} holds feature set `{}` but `{feature_set}` is required",
                path.display(),
                table.feature_set()
            )));
        }
        let vocab = match vocab {
            Some(v) => v.clone(),
            None => {
                let vp = vocab_path(path);
                if vp.exists() {
                    serde_json::from_slice(&std::fs::read(&vp)?)?
                } else {
                    log::warn!(
                        "no vocabulary next to {}; call types cannot be encoded at predict time",
                        path.display()
                    );
                    Vocabulary::default()
                }
            }
        };
        return Ok((table, vocab));
    }
    let records = load_records(path)?;
    let vocab = vocab.cloned().unwrap_or_else(|| Vocabulary::from_records(&records));
    let table = assemble_features(&records, &vocab, feature_set)?;
    Ok((table, vocab))
}

pub fn fingerprint(table: &FeatureTable) -> Result<DataFingerprint> {
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    Ok(DataFingerprint {
        rows: table.n_rows(),
        sha256: hex::encode(Sha256::digest(&buf)),
    })
}

pub struct TrainOutput {
    pub artifact: ModelArtifact,
    /// Per-epoch metrics, MLP only.
    pub history: Option<Vec<EpochMetrics>>,
}

fn sorted_classes(y: &[u32]) -> Vec<u32> {
    let mut c = y.to_vec();
    c.sort_unstable();
    c.dedup();
    c
}

fn weighted_tree_config(base: &TreeConfig, balanced: bool, y: &[u32]) -> Result<TreeConfig> {
    let mut cfg = base.clone();
    if balanced && cfg.class_weights.is_none() {
        cfg.class_weights = Some(ClassWeights::balanced(y)?);
    }
    Ok(cfg)
}

/// Fits `cfg.model` on the training partition of `table`.
pub fn train_model(table: &FeatureTable, vocab: &Vocabulary, cfg: &PipelineConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if table.feature_set() != cfg.feature_set {
        return Err(Error::InvalidInput(format!(
            "table holds feature set `{}` but the config asks for `{}`",
            table.feature_set(),
            cfg.feature_set
        )));
    }
    let splits = config_splits(table, cfg)?;
    let train = table.select_rows(&splits.train);
    let y = train.labels(cfg.task);
    // Fitted on training rows only and applied to every model's inputs.
    let scaler = if cfg.scale {
        Scaler::fit(train.x())?
    } else {
        Scaler::identity(train.n_features())
    };
    let x = scaler.transform(train.x())?;
    let yf: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    let regression = cfg.task == Task::Regression;
    let mut history = None;
    let model = match cfg.model {
        ModelKind::Linear => ModelPayload::Linear(fit_linear_regression(x.view(), &yf)?),
        ModelKind::Logreg => {
            let cw = if cfg.balanced {
                Some(ClassWeights::balanced(y)?)
            } else {
                None
            };
            ModelPayload::Logreg(fit_logistic_regression(x.view(), y, cw.as_ref(), cfg.logistic)?)
        }
        ModelKind::Nb => ModelPayload::Nb(fit_gaussian_nb(x.view(), y)?),
        ModelKind::Dt if regression => ModelPayload::Dt(fit_regression_tree(x.view(), &yf, None, &cfg.tree)?),
        ModelKind::Dt => {
            let tree = weighted_tree_config(&cfg.tree, cfg.balanced, y)?;
            ModelPayload::Dt(fit_decision_tree(x.view(), y, None, &tree)?)
        }
        ModelKind::Rf if regression => ModelPayload::Rf(fit_random_forest_regressor(x.view(), &yf, &cfg.forest)?),
        ModelKind::Rf => ModelPayload::Rf(fit_random_forest(x.view(), y, &cfg.forest)?),
        ModelKind::Mlp => {
            let model = init_mlp(train.n_features(), &cfg.mlp.hidden, &sorted_classes(y), cfg.mlp.seed)?;
            let val = if splits.validation.is_empty() {
                None
            } else {
                let v = table.select_rows(&splits.validation);
                Some((scaler.transform(v.x())?, v.labels(cfg.task).to_vec()))
            };
            let (model, hist) = train_mlp(
                model,
                x.view(),
                y,
                val.as_ref().map(|(vx, vy)| (vx.view(), vy.as_slice())),
                &cfg.mlp,
            )?;
            history = Some(hist);
            ModelPayload::Mlp(model)
        }
    };
    let artifact = ModelArtifact {
        schema_version: SCHEMA_VERSION,
        task: cfg.task,
        feature_set: cfg.feature_set,
        feature_names: table.feature_names().to_vec(),
        scaler,
        vocabulary: vocab.clone(),
        model,
        training: TrainingEcho {
            config_hash: cfg.hash(),
            train_rows: splits.train.len(),
            config: cfg.clone(),
        },
        data: fingerprint(table)?,
    };
    Ok(TrainOutput { artifact, history })
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub model_type: ModelKind,
    pub task: Task,
    pub feature_set: FeatureSet,
    pub config_hash: String,
    /// Rows scored.
    pub rows: usize,
    /// True when the rows are the held-out test split of the training data.
    pub held_out: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub report: Option<ClassReport>,
    /// Binary AUC with the dangerous class as positive.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc: Option<f64>,
    /// One-vs-rest AUC keyed by class label.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ovr_auc: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub r2: Option<f64>,
}

impl Metrics {
    /// Recall of label 1, if the report has it.
    pub fn recall_dangerous(&self) -> Option<f64> {
        self.report.as_ref().and_then(|r| r.class(1)).map(|c| c.recall)
    }
}

pub struct EvalOutput {
    pub metrics: Metrics,
    pub confusion: Option<ConfusionMatrix>,
    pub curves: Vec<(String, RocCurve)>,
    pub predictions: Predictions,
}

/// Scores `artifact` on `table`. When the table is the one the model was
/// trained on (same fingerprint) and `all_rows` is false, only the test
/// split is used; otherwise every row is scored.
pub fn evaluate(artifact: &ModelArtifact, table: &FeatureTable, all_rows: bool) -> Result<EvalOutput> {
    if table.feature_set() != artifact.feature_set {
        return Err(Error::InvalidInput(format!(
            "model was trained on feature set `{}` but the table holds `{}`",
            artifact.feature_set,
            table.feature_set()
        )));
    }
    let same_data = fingerprint(table)? == artifact.data;
    let held_out = same_data && !all_rows;
    let rows: Vec<usize> = if held_out {
        config_splits(table, &artifact.training.config)?.test
    } else {
        if !same_data && !all_rows {
            log::info!(
                "table differs from the training data; scoring all {} rows",
                table.n_rows()
            );
        }
        (0..table.n_rows()).collect()
    };
    let x = table.x().select(Axis(0), &rows);
    let y: Vec<u32> = rows.iter().map(|&i| table.labels(artifact.task)[i]).collect();
    let predictions = artifact.predict(x.view())?;
    let mut metrics = Metrics {
        model_type: artifact.model.kind(),
        task: artifact.task,
        feature_set: artifact.feature_set,
        config_hash: artifact.training.config_hash.clone(),
        rows: rows.len(),
        held_out,
        accuracy: None,
        report: None,
        auc: None,
        ovr_auc: None,
        mse: None,
        r2: None,
    };
    let mut confusion = None;
    let mut curves = Vec::new();
    match &predictions {
        Predictions::Values(v) => {
            let yf: Vec<f64> = y.iter().map(|&t| f64::from(t)).collect();
            metrics.mse = Some(mean_squared_error(&yf, v));
            metrics.r2 = Some(r_squared(&yf, v));
        }
        Predictions::Classes { classes, labels, proba } => {
            let mut all: Vec<u32> = classes.iter().chain(&y).copied().collect();
            all.sort_unstable();
            all.dedup();
            let cm = confusion_matrix(&y, labels, &all)?;
            let report = classification_report(&cm);
            metrics.accuracy = Some(report.accuracy);
            metrics.report = Some(report);
            confusion = Some(cm);
            if artifact.task == Task::Binary {
                let pos = classes.iter().position(|&c| c == 1);
                let truth: Vec<u32> = y.iter().map(|&t| u32::from(t == 1)).collect();
                let mixed = truth.contains(&0) && truth.contains(&1);
                match pos {
                    Some(j) if mixed => {
                        let curve = roc_curve(&truth, &proba.column(j).to_vec())?;
                        metrics.auc = Some(curve.auc);
                        curves.push(("dangerous".to_string(), curve));
                    }
                    _ => log::warn!("AUC undefined: need both classes in labels and model"),
                }
            } else {
                let ovr = multiclass_ovr_roc(&y, classes, proba.view())?;
                metrics.ovr_auc = Some(ovr.curves.iter().map(|(c, r)| (c.to_string(), r.auc)).collect());
                curves.extend(ovr.curves.into_iter().map(|(c, r)| (format!("class {c}"), r)));
            }
        }
    }
    Ok(EvalOutput {
        metrics,
        confusion,
        curves,
        predictions,
    })
}

/// `metrics.json`, plus `confusion.csv`, `roc.csv` and `roc.svg` when they apply.
pub fn write_eval_outputs(dir: &Path, out: &EvalOutput) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(&out.metrics)?;
    json.push(b'\n');
    write_atomic_bytes(&dir.join("metrics.json"), &json)?;
    if let Some(cm) = &out.confusion {
        write_atomic(&dir.join("confusion.csv"), |w| cm.write_csv(w))?;
    }
    if !out.curves.is_empty() {
        let named: Vec<(String, &RocCurve)> = out.curves.iter().map(|(n, c)| (n.clone(), c)).collect();
        write_atomic(&dir.join("roc.csv"), |w| write_roc_csv(&named, w))?;
        write_atomic_bytes(&dir.join("roc.svg"), roc_svg(&named).as_bytes())?;
    }
    Ok(())
}

/// Count and share of records at each priority 1 through 6.
pub fn priority_distribution(records: &[RawCallRecord]) -> Vec<(u8, u64, f64)> {
    let mut counts = [0u64; 6];
    for r in records {
        if (1..=6).contains(&r.priority) {
            counts[usize::from(r.priority) - 1] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let share = if total == 0 { 0.0 } else { c as f64 / total as f64 };
            (i as u8 + 1, c, share)
        })
        .collect()
}

pub fn write_distribution_csv<W: Write>(rows: &[(u8, u64, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["priority", "count", "share"])?;
    for (p, c, s) in rows {
        w.write_record([p.to_string(), c.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic, SynthConfig};

    fn table(rows: usize, fs: FeatureSet) -> (FeatureTable, Vocabulary) {
        let cfg = SynthConfig {
            rows,
            ..SynthConfig::default()
        };
        let (records, _) = generate_synthetic(&cfg).unwrap();
        let vocab = Vocabulary::from_records(&records);
        (assemble_features(&records, &vocab, fs).unwrap(), vocab)
    }

    #[test]
    fn splits_partition_rows() {
        let s = split_rows(100, 0.2, 0.5, 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (80, 10, 10));
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let plain = split_rows(100, 0.2, 0.0, 3).unwrap();
        assert!(plain.validation.is_empty());
        assert_eq!(plain.train, s.train);
    }

    #[test]
    fn scaling_can_be_switched_off() {
        let (t, vocab) = table(300, FeatureSet::Citywide);
        let mut cfg = PipelineConfig {
            feature_set: FeatureSet::Citywide,
            model: ModelKind::Dt,
            ..PipelineConfig::default()
        };
        assert_ne!(
            train_model(&t, &vocab, &cfg).unwrap().artifact.scaler,
            Scaler::identity(3)
        );
        cfg.scale = false;
        assert_eq!(
            train_model(&t, &vocab, &cfg).unwrap().artifact.scaler,
            Scaler::identity(3)
        );
    }

    #[test]
    fn stratified_splits_partition_and_keep_label_shares() {
        let (t, _) = table(1000, FeatureSet::Citywide);
        let cfg = PipelineConfig {
            stratify: true,
            validation_fraction: 0.5,
            ..PipelineConfig::default()
        };
        let s = config_splits(&t, &cfg).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        let labels = t.labels(Task::Binary);
        let share = |rows: &[usize]| rows.iter().filter(|&&i| labels[i] == 1).count() as f64 / rows.len() as f64;
        let held: Vec<usize> = s.validation.iter().chain(&s.test).copied().collect();
        assert!((share(&s.train) - share(&held)).abs() <= 0.01);
        assert_ne!(s, split_rows(1000, 0.2, 0.5, cfg.seed).unwrap());
    }

    #[test]
    fn every_model_trains_and_round_trips() {
        let (t, vocab) = table(600, FeatureSet::Exact);
        for (model, task) in [
            (ModelKind::Linear, Task::Regression),
            (ModelKind::Logreg, Task::Binary),
            (ModelKind::Nb, Task::Multiclass),
            (ModelKind::Dt, Task::Binary),
            (ModelKind::Dt, Task::Regression),
            (ModelKind::Rf, Task::Multiclass),
            (ModelKind::Rf, Task::Regression),
            (ModelKind::Mlp, Task::Binary),
            (ModelKind::Mlp, Task::Multiclass),
        ] {
            let mut cfg = PipelineConfig {
                model,
                task,
                validation_fraction: 0.5,
                ..PipelineConfig::default()
            };
            cfg.forest.n_estimators = 5;
            cfg.mlp.epochs = 2;
            let out = train_model(&t, &vocab, &cfg).unwrap();
            assert_eq!(out.history.is_some(), model == ModelKind::Mlp);
            let mut buf = Vec::new();
            out.artifact.to_writer(&mut buf).unwrap();
            let back = ModelArtifact::from_slice(&buf, Path::new("m.json")).unwrap();
            let a = evaluate(&out.artifact, &t, false).unwrap();
            let b = evaluate(&back, &t, false).unwrap();
            assert_eq!(a.predictions, b.predictions, "{model} {task}");
            assert!(a.metrics.held_out);
            assert_eq!(a.metrics.rows, 60);
            match task {
                Task::Regression => assert!(a.metrics.mse.is_some()),
                Task::Binary => assert!(a.metrics.auc.is_some()),
                Task::Multiclass => assert!(a.metrics.ovr_auc.is_some()),
            }
        }
    }

    #[test]
    fn feature_set_mismatch_fails_fast() {
        let (t, vocab) = table(200, FeatureSet::Exact);
        let mut cfg = PipelineConfig::default();
        cfg.forest.n_estimators = 2;
        let out = train_model(&t, &vocab, &cfg).unwrap();
        let (other, _) = table(200, FeatureSet::Grid1);
        let err = evaluate(&out.artifact, &other, false).err().unwrap();
        assert!(err.to_string().contains("feature set"), "{err}");
        let bad = PipelineConfig {
            feature_set: FeatureSet::Grid2,
            ..cfg
        };
        assert!(train_model(&t, &vocab, &bad).is_err());
    }

    #[test]
    fn distribution_counts() {
        let cfg = SynthConfig {
            rows: 500,
            ..SynthConfig::default()
        };
        let (records, _) = generate_synthetic(&cfg).unwrap();
        let d = priority_distribution(&records);
        assert_eq!(d.len(), 6);
        assert_eq!(d.iter().map(|r| r.1).sum::<u64>(), 500);
        assert!((d.iter().map(|r| r.2).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
