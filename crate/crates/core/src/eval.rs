//! Classification metrics: confusion matrices, per-class reports and ROC/AUC.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true labels, columns are predicted labels, both in `labels` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<u32>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, true_idx: usize, pred_idx: usize) -> u64 {
        self.counts[true_idx][pred_idx]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    /// `trace / total`, or 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }

    /// CSV with a `true\pred` corner cell, one row per true label.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["true\\pred".to_string()];
        header.extend(self.labels.iter().map(|l| l.to_string()));
        w.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(&self.counts) {
            let mut rec = vec![label.to_string()];
            rec.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn confusion_matrix(y_true: &[u32], y_pred: &[u32], labels: &[u32]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::InvalidInput(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let index: BTreeMap<u32, usize> = labels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    if index.len() != labels.len() {
        return Err(Error::InvalidInput("label list contains duplicates".into()));
    }
    let lookup = |v: u32| {
        index
            .get(&v)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("label {v} is not in {labels:?}")))
    };
    let k = labels.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (t, p) in y_true.iter().zip(y_pred) {
        counts[lookup(*t)?][lookup(*p)?] += 1;
    }
    Ok(ConfusionMatrix {
        labels: labels.to_vec(),
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: u32,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
    /// Unweighted mean over classes.
    pub macro_avg: AverageMetrics,
    /// Mean over classes weighted by support.
    pub weighted_avg: AverageMetrics,
    pub total: u64,
}

impl ClassReport {
    pub fn class(&self, label: u32) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.label == label)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1. Zero denominators give 0.
pub fn classification_report(cm: &ConfusionMatrix) -> ClassReport {
    let k = cm.labels.len();
    let classes: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.counts[c][c];
            let predicted: u64 = (0..k).map(|r| cm.counts[r][c]).sum();
            let support: u64 = cm.counts[c].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label: cm.labels[c],
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let total = cm.total();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if k == 0 {
            0.0
        } else {
            classes.iter().map(f).sum::<f64>() / k as f64
        }
    };
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        if total == 0 {
            0.0
        } else {
            classes.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / total as f64
        }
    };
    ClassReport {
        macro_avg: AverageMetrics {
            precision: mean(|c| c.precision),
            recall: mean(|c| c.recall),
            f1: mean(|c| c.f1),
        },
        weighted_avg: AverageMetrics {
            precision: weighted(|c| c.precision),
            recall: weighted(|c| c.recall),
            f1: weighted(|c| c.f1),
        },
        accuracy: cm.accuracy(),
        total,
        classes,
    }
}

/// Fraction of positions where the two label vectors agree.
pub fn accuracy(y_true: &[u32], y_pred: &[u32]) -> f64 {
    if y_true.is_empty() {
        return 0.0;
    }
    y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count() as f64 / y_true.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores `>= threshold` are called positive. The first point uses +inf.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC curve over the distinct scores in descending order, AUC by the
/// trapezoidal rule.
pub fn roc_curve(y_true: &[u32], scores: &[f64]) -> Result<RocCurve> {
    if y_true.len() != scores.len() {
        return Err(Error::InvalidInput(format!(
            "{} labels but {} scores",
            y_true.len(),
            scores.len()
        )));
    }
    if let Some(v) = y_true.iter().find(|v| **v > 1) {
        return Err(Error::InvalidInput(format!("ROC labels must be 0/1, found {v}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("ROC scores contain NaN".into()));
    }
    let pos = y_true.iter().filter(|v| **v == 1).count();
    let neg = y_true.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput("ROC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if y_true[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum();
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvrRoc {
    /// One curve per class present in the labels, in column order.
    pub curves: Vec<(u32, RocCurve)>,
    /// Classes skipped because they never occur (or always occur).
    pub omitted: Vec<u32>,
}

/// One-vs-rest ROC curves; column `j` of `scores` belongs to `classes[j]`.
pub fn multiclass_ovr_roc(y_true: &[u32], classes: &[u32], scores: ArrayView2<'_, f64>) -> Result<OvrRoc> {
    if scores.nrows() != y_true.len() || scores.ncols() != classes.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len() * classes.len(),
            got: scores.nrows() * scores.ncols(),
        });
    }
    let mut out = OvrRoc {
        curves: Vec::new(),
        omitted: Vec::new(),
    };
    for (j, &c) in classes.iter().enumerate() {
        let binary: Vec<u32> = y_true.iter().map(|&t| u32::from(t == c)).collect();
        let present = binary.iter().filter(|b| **b == 1).count();
        if present == 0 || present == binary.len() {
            log::warn!("class {c} has no positive/negative split in the labels; ROC curve omitted");
            out.omitted.push(c);
            continue;
        }
        let col = scores.column(j).to_vec();
        out.curves.push((c, roc_curve(&binary, &col)?));
    }
    Ok(out)
}

/// `curve,threshold,fpr,tpr` rows for each named curve.
pub fn write_roc_csv<W: Write>(curves: &[(String, &RocCurve)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["curve", "threshold", "fpr", "tpr"])?;
    for (name, curve) in curves {
        for p in &curve.points {
            w.write_record([
                name.clone(),
                p.threshold.to_string(),
                p.fpr.to_string(),
                p.tpr.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Standalone SVG line plot with one polyline per curve and an AUC legend.
pub fn roc_svg(curves: &[(String, &RocCurve)]) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 50.0;
    let px = |x: f64| PAD + x * SIZE;
    let py = |y: f64| PAD + (1.0 - y) * SIZE;
    let total = SIZE + 2.0 * PAD;
    let legend_h = 18.0 * curves.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
        w = total + 220.0,
        h = total.max(PAD + legend_h + 20.0)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 4"/>"##,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{v:.1}</text>"#,
            px(v),
            py(0.0) + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{v:.1}</text>"#,
            px(0.0) - 6.0,
            py(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">False positive rate</text>"#,
        px(0.5),
        total - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{y}" text-anchor="middle" transform="rotate(-90 14 {y})">True positive rate</text>"#,
        y = py(0.5)
    );
    for (i, (name, curve)) in curves.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.fpr), py(p.tpr)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = PAD + 10.0 + 18.0 * i as f64;
        let lx = total + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{} (AUC = {:.3})</text>"#,
            lx + 26.0,
            ly + 4.0,
            xml_escape(name),
            curve.auc
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
