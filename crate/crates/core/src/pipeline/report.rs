//! Experiment presets and the side-by-side comparison table.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::{ModelKind, PipelineConfig};
use super::experiment::{evaluate, fingerprint, train_model, Metrics};
use crate::error::{Error, Result};
use crate::featurize::{assemble_features, FeatureSet, Task, Vocabulary};
use crate::ingest::RawCallRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub task: Task,
    pub feature_set: FeatureSet,
    pub model: ModelKind,
    /// Share of held-out rows used for validation (MLP presets).
    pub validation_fraction: f64,
}

const fn p(name: &'static str, task: Task, feature_set: FeatureSet, model: ModelKind) -> Preset {
    Preset {
        name,
        task,
        feature_set,
        model,
        validation_fraction: 0.0,
    }
}

pub const PRESETS: [Preset; 10] = [
    p(
        "multiclass-citywide-rf",
        Task::Multiclass,
        FeatureSet::Citywide,
        ModelKind::Rf,
    ),
    p(
        "binary-citywide-logreg",
        Task::Binary,
        FeatureSet::Citywide,
        ModelKind::Logreg,
    ),
    p("binary-citywide-nb", Task::Binary, FeatureSet::Citywide, ModelKind::Nb),
    p("binary-citywide-dt", Task::Binary, FeatureSet::Citywide, ModelKind::Dt),
    p("binary-citywide-rf", Task::Binary, FeatureSet::Citywide, ModelKind::Rf),
    p("binary-grid1-rf", Task::Binary, FeatureSet::Grid1, ModelKind::Rf),
    p("binary-grid2-rf", Task::Binary, FeatureSet::Grid2, ModelKind::Rf),
    p("binary-exact-rf", Task::Binary, FeatureSet::Exact, ModelKind::Rf),
    Preset {
        validation_fraction: 0.5,
        ..p("ann-binary", Task::Binary, FeatureSet::Exact, ModelKind::Mlp)
    },
    Preset {
        validation_fraction: 0.5,
        ..p("ann-multiclass", Task::Multiclass, FeatureSet::Exact, ModelKind::Mlp)
    },
];

pub fn preset(name: &str) -> Result<Preset> {
    PRESETS.iter().copied().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        Error::Config(format!("unknown preset `{name}` ({})", names.join("|")))
    })
}

impl Preset {
    /// `base` with this preset's task, features, model and split applied.
    pub fn config(&self, base: &PipelineConfig) -> PipelineConfig {
        PipelineConfig {
            task: self.task,
            feature_set: self.feature_set,
            model: self.model,
            validation_fraction: self.validation_fraction,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetResult {
    pub preset: String,
    pub data_rows: usize,
    pub data_sha256: String,
    pub metrics: Metrics,
}

/// Trains and evaluates each preset on the held-out split of `records`.
pub fn run_presets(records: &[RawCallRecord], base: &PipelineConfig, presets: &[Preset]) -> Result<Vec<PresetResult>> {
    let vocab = Vocabulary::from_records(records);
    presets
        .iter()
        .map(|p| {
            let cfg = p.config(base);
            let table = assemble_features(records, &vocab, p.feature_set)?;
            log::info!("preset {}: training {} on {} rows", p.name, p.model, table.n_rows());
            let out = train_model(&table, &vocab, &cfg)?;
            let eval = evaluate(&out.artifact, &table, false)?;
            let fp = fingerprint(&table)?;
            Ok(PresetResult {
                preset: p.name.to_string(),
                data_rows: fp.rows,
                data_sha256: fp.sha256,
                metrics: eval.metrics,
            })
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

/// Markdown summary: one row per preset, then per-class F1 side by side.
pub fn render_table(results: &[PresetResult], note: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# crimecast report\n\n{note}\n");
    let _ = writeln!(
        s,
        "| preset | task | features | model | test rows | accuracy | macro F1 | weighted F1 | recall (dangerous) | AUC |"
    );
    let _ = writeln!(s, "|---|---|---|---|---:|---:|---:|---:|---:|---:|");
    for r in results {
        let m = &r.metrics;
        let auc = m.auc.or_else(|| {
            m.ovr_auc
                .as_ref()
                .filter(|o| !o.is_empty())
                .map(|o| o.values().sum::<f64>() / o.len() as f64)
        });
        let recall = if m.task == Task::Binary {
            m.recall_dangerous()
        } else {
            None
        };
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.preset,
            m.task,
            m.feature_set,
            m.model_type,
            m.rows,
            cell(m.accuracy),
            cell(m.report.as_ref().map(|r| r.macro_avg.f1)),
            cell(m.report.as_ref().map(|r| r.weighted_avg.f1)),
            cell(recall),
            cell(auc),
        );
    }
    let labels: BTreeSet<u32> = results
        .iter()
        .filter_map(|r| r.metrics.report.as_ref())
        .flat_map(|rep| rep.classes.iter().map(|c| c.label))
        .collect();
    if !labels.is_empty() {
        let _ = writeln!(s, "\nPer-class F1 (multiclass AUC is the one-vs-rest mean):\n");
        let _ = write!(s, "| preset |");
        for l in &labels {
            let _ = write!(s, " {l} |");
        }
        let _ = write!(s, "\n|---|");
        for _ in &labels {
            let _ = write!(s, "---:|");
        }
        s.push('\n');
        for r in results {
            let Some(rep) = &r.metrics.report else { continue };
            let _ = write!(s, "| {} |", r.preset);
            for l in &labels {
                let _ = write!(s, " {} |", cell(rep.class(*l).map(|c| c.f1)));
            }
            s.push('\n');
        }
    }
    if let Some(first) = results.first() {
        let _ = writeln!(
            s,
            "\nFirst preset feature table: {} rows, sha256 {}",
            first.data_rows, first.data_sha256
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic, SynthConfig};

    #[test]
    fn preset_names_are_unique_and_valid() {
        let names: BTreeSet<&str> = PRESETS.iter().map(|p| p.name).collect();
        assert_eq!(names.len(), PRESETS.len());
        for p in PRESETS {
            assert!(p.model.supports(p.task), "{}", p.name);
            p.config(&PipelineConfig::default()).validate().unwrap();
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn small_report_renders() {
        let (records, _) = generate_synthetic(&SynthConfig {
            rows: 400,
            ..SynthConfig::default()
        })
        .unwrap();
        let mut base = PipelineConfig::default();
        base.forest.n_estimators = 3;
        base.mlp.epochs = 1;
        let results = run_presets(&records, &base, &PRESETS).unwrap();
        let table = render_table(&results, "synthetic");
        for p in PRESETS {
            assert!(table.contains(p.name));
        }
    }
}
