//! CART decision trees over numeric features.
//!
//! Splits are searched at midpoints between consecutive distinct values of
//! each candidate feature. Among equally good splits (within [`TIE_EPS`]) the
//! lowest feature index wins, then the smallest threshold.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::ClassWeights;

/// Two impurities closer than this are treated as equal.
pub const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[default]
    Gini,
    Entropy,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Gini => "gini",
            Criterion::Entropy => "entropy",
        })
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gini" => Ok(Criterion::Gini),
            "entropy" => Ok(Criterion::Entropy),
            _ => Err(Error::Config(format!("unknown criterion `{s}` (gini|entropy)"))),
        }
    }
}

fn impurity_of(counts: impl Iterator<Item = f64>, total: f64, criterion: Criterion) -> f64 {
    match criterion {
        Criterion::Gini => 1.0 - counts.map(|c| (c / total) * (c / total)).sum::<f64>(),
        Criterion::Entropy => -counts
            .filter(|&c| c > 0.0)
            .map(|c| {
                let p = c / total;
                p * p.log2()
            })
            .sum::<f64>(),
    }
}

/// Gini (`1 - Σ p²`) or entropy (`-Σ p log2 p`) of weighted class counts.
pub fn impurity(counts: &[f64], criterion: Criterion) -> Result<f64> {
    if counts.iter().any(|c| *c < 0.0 || !c.is_finite()) {
        return Err(Error::InvalidInput(
            "class counts must be finite and non-negative".into(),
        ));
    }
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput("impurity of an empty node is undefined".into()));
    }
    Ok(impurity_of(counts.iter().copied(), total, criterion))
}

/// Growth limits and weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub criterion: Criterion,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Multiplies each sample's weight by its class weight.
    pub class_weights: Option<ClassWeights>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            criterion: Criterion::Gini,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            class_weights: None,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_samples_split < 2 {
            return Err(Error::Config("min_samples_split must be at least 2".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::Config("min_samples_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

/// A node of a fitted tree. Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    /// Classification leaf holding the weighted class histogram.
    Leaf { histogram: Vec<f64>, samples: usize },
    /// Regression leaf holding the weighted target mean.
    ValueLeaf { mean: f64, samples: usize },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn route(&self, row: &[f64]) -> &TreeNode {
        let mut node = self;
        while let TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } = node
        {
            node = if row[*feature] <= *threshold { left } else { right };
        }
        node
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
            _ => 0,
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
            _ => 1,
        }
    }

    /// Adds this leaf's normalised class distribution into `acc`.
    pub(crate) fn accumulate_proba(&self, row: &[f64], acc: &mut [f64]) {
        if let TreeNode::Leaf { histogram, .. } = self.route(row) {
            let total: f64 = histogram.iter().sum();
            if total > 0.0 {
                for (a, h) in acc.iter_mut().zip(histogram) {
                    *a += h / total;
                }
            } else {
                let u = 1.0 / acc.len() as f64;
                acc.iter_mut().for_each(|a| *a += u);
            }
        }
    }

    pub(crate) fn value(&self, row: &[f64]) -> f64 {
        match self.route(row) {
            TreeNode::ValueLeaf { mean, .. } => *mean,
            TreeNode::Leaf { histogram, .. } => {
                histogram
                    .iter()
                    .enumerate()
                    .fold(
                        (0usize, f64::NEG_INFINITY),
                        |best, (i, &h)| if h > best.1 { (i, h) } else { best },
                    )
                    .0 as f64
            }
            TreeNode::Split { .. } => unreachable!("route ends at a leaf"),
        }
    }
}

/// Chosen split of a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// Weighted mean impurity of the two children.
    pub impurity: f64,
}

pub(crate) enum Target<'a> {
    Class {
        y: &'a [usize],
        n_classes: usize,
        criterion: Criterion,
    },
    Value {
        y: &'a [f64],
    },
}

/// Running sums for a set of samples.
#[derive(Clone)]
pub(crate) struct Stats {
    weight: f64,
    hist: Vec<f64>,
    sum: f64,
    sum_sq: f64,
}

impl Stats {
    fn new(n_classes: usize) -> Stats {
        Stats {
            weight: 0.0,
            hist: vec![0.0; n_classes],
            sum: 0.0,
            sum_sq: 0.0,
        }
    }

    fn clear(&mut self) {
        self.weight = 0.0;
        self.hist.iter_mut().for_each(|h| *h = 0.0);
        self.sum = 0.0;
        self.sum_sq = 0.0;
    }
}

pub(crate) struct Builder<'a, R> {
    /// Column-major feature values.
    cols: &'a [Vec<f64>],
    target: Target<'a>,
    weights: &'a [f64],
    max_depth: Option<usize>,
    min_samples_split: usize,
    min_samples_leaf: usize,
    max_features: usize,
    rng: Option<&'a mut R>,
    sorted: Vec<(f64, u32)>,
    scratch: Vec<u32>,
    left: Stats,
}

pub(crate) fn columns(x: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    x.columns().into_iter().map(|c| c.to_vec()).collect()
}

impl<'a, R: Rng> Builder<'a, R> {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        cols: &'a [Vec<f64>],
        target: Target<'a>,
        weights: &'a [f64],
        cfg: &TreeConfig,
        max_features: usize,
        rng: Option<&'a mut R>,
    ) -> Self {
        let k = match target {
            Target::Class { n_classes, .. } => n_classes,
            Target::Value { .. } => 0,
        };
        Builder {
            cols,
            target,
            weights,
            max_depth: cfg.max_depth,
            min_samples_split: cfg.min_samples_split,
            min_samples_leaf: cfg.min_samples_leaf,
            max_features,
            rng,
            sorted: Vec::new(),
            scratch: Vec::new(),
            left: Stats::new(k),
        }
    }

    fn n_classes(&self) -> usize {
        match self.target {
            Target::Class { n_classes, .. } => n_classes,
            Target::Value { .. } => 0,
        }
    }

    fn add(&self, stats: &mut Stats, s: usize) {
        let w = self.weights[s];
        stats.weight += w;
        match self.target {
            Target::Class { y, .. } => stats.hist[y[s]] += w,
            Target::Value { y } => {
                stats.sum += w * y[s];
                stats.sum_sq += w * y[s] * y[s];
            }
        }
    }

    fn stats(&self, samples: &[u32]) -> Stats {
        let mut st = Stats::new(self.n_classes());
        for &s in samples {
            self.add(&mut st, s as usize);
        }
        st
    }

    fn node_impurity(&self, st: &Stats) -> f64 {
        match self.target {
            Target::Class { criterion, .. } => impurity_of(st.hist.iter().copied(), st.weight, criterion),
            Target::Value { .. } => {
                let mean = st.sum / st.weight;
                (st.sum_sq / st.weight - mean * mean).max(0.0)
            }
        }
    }

    /// Weighted child impurity given left-side sums and node totals.
    fn child_impurity(&self, left: &Stats, total: &Stats) -> f64 {
        let wl = left.weight;
        let wr = total.weight - wl;
        match self.target {
            Target::Class { criterion, .. } => {
                let il = impurity_of(left.hist.iter().copied(), wl, criterion);
                let right = total.hist.iter().zip(&left.hist).map(|(t, l)| (t - l).max(0.0));
                let ir = impurity_of(right, wr, criterion);
                (wl * il + wr * ir) / total.weight
            }
            Target::Value { .. } => {
                let (sl, sr) = (left.sum, total.sum - left.sum);
                let ssq = total.sum_sq - sl * sl / wl - sr * sr / wr;
                ssq.max(0.0) / total.weight
            }
        }
    }

    fn is_pure(&self, samples: &[u32], st: &Stats) -> bool {
        match self.target {
            Target::Class { .. } => st.hist.iter().filter(|&&h| h > 0.0).count() <= 1,
            Target::Value { y } => {
                let first = y[samples[0] as usize];
                samples.iter().all(|&s| y[s as usize] == first)
            }
        }
    }

    fn leaf(&self, st: &Stats, n: usize) -> TreeNode {
        match self.target {
            Target::Class { .. } => TreeNode::Leaf {
                histogram: st.hist.clone(),
                samples: n,
            },
            Target::Value { .. } => TreeNode::ValueLeaf {
                mean: if st.weight > 0.0 { st.sum / st.weight } else { 0.0 },
                samples: n,
            },
        }
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let d = self.cols.len();
        match self.rng.as_deref_mut() {
            Some(rng) if self.max_features < d => {
                let mut f = rand::seq::index::sample(rng, d, self.max_features).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        }
    }

    /// Best split of `samples` over `features`, or `None` when no candidate
    /// lowers the impurity below `parent`.
    pub(crate) fn find_split(
        &mut self,
        samples: &[u32],
        features: &[usize],
        total: &Stats,
        parent: f64,
    ) -> Option<Split> {
        let m = samples.len();
        let mut best: Option<Split> = None;
        let mut left = std::mem::replace(&mut self.left, Stats::new(0));
        let mut sorted = std::mem::take(&mut self.sorted);
        for &f in features {
            let col = &self.cols[f];
            sorted.clear();
            sorted.extend(samples.iter().map(|&s| (col[s as usize], s)));
            sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if sorted[0].0 == sorted[m - 1].0 {
                continue;
            }
            left.clear();
            for i in 0..m - 1 {
                self.add(&mut left, sorted[i].1 as usize);
                let (lo, hi) = (sorted[i].0, sorted[i + 1].0);
                if lo == hi {
                    continue;
                }
                let n_left = i + 1;
                if n_left < self.min_samples_leaf {
                    continue;
                }
                if m - n_left < self.min_samples_leaf {
                    break;
                }
                if left.weight <= 0.0 || total.weight - left.weight <= 0.0 {
                    continue;
                }
                let imp = self.child_impurity(&left, total);
                if best.is_none_or(|b| imp < b.impurity - TIE_EPS) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(Split {
                        feature: f,
                        threshold,
                        impurity: imp,
                    });
                }
            }
        }
        self.left = left;
        self.sorted = sorted;
        best.filter(|b| b.impurity < parent - TIE_EPS)
    }

    pub(crate) fn grow(&mut self, samples: &mut [u32], depth: usize) -> TreeNode {
        let st = self.stats(samples);
        let n = samples.len();
        if n < self.min_samples_split
            || self.max_depth.is_some_and(|md| depth >= md)
            || st.weight <= 0.0
            || self.is_pure(samples, &st)
        {
            return self.leaf(&st, n);
        }
        let parent = self.node_impurity(&st);
        let features = self.candidate_features();
        let Some(split) = self.find_split(samples, &features, &st, parent) else {
            return self.leaf(&st, n);
        };

        let col = &self.cols[split.feature];
        self.scratch.clear();
        let mut n_left = 0;
        for i in 0..n {
            let s = samples[i];
            if col[s as usize] <= split.threshold {
                samples[n_left] = s;
                n_left += 1;
            } else {
                self.scratch.push(s);
            }
        }
        samples[n_left..].copy_from_slice(&self.scratch);
        let (l, r) = samples.split_at_mut(n_left);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

/// Sorted distinct labels and each sample's index into them.
pub(crate) fn encode_labels(y: &[u32]) -> (Vec<u32>, Vec<usize>) {
    let mut classes = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let idx = y
        .iter()
        .map(|v| classes.binary_search(v).expect("label present"))
        .collect();
    (classes, idx)
}

/// Per-sample weights after applying optional class weights.
pub(crate) fn effective_weights(y: &[u32], sample_weights: Option<&[f64]>, cw: Option<&ClassWeights>) -> Vec<f64> {
    (0..y.len())
        .map(|i| sample_weights.map_or(1.0, |w| w[i]) * cw.map_or(1.0, |c| c.weight(y[i])))
        .collect()
}

fn check_fit_input(x: ArrayView2<'_, f64>, n_targets: usize, sample_weights: Option<&[f64]>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::InvalidInput("cannot fit a tree on zero rows".into()));
    }
    if n_targets != x.nrows() {
        return Err(Error::InvalidInput(format!(
            "{} rows but {n_targets} targets",
            x.nrows()
        )));
    }
    if let Some(w) = sample_weights {
        if w.len() != x.nrows() || w.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidInput(
                "sample weights must be finite, non-negative, one per row".into(),
            ));
        }
    }
    Ok(())
}

/// Best split over the whole of `x` (all rows form one node).
pub fn best_split(
    x: ArrayView2<'_, f64>,
    y: &[u32],
    sample_weights: &[f64],
    features: &[usize],
    cfg: &TreeConfig,
) -> Option<Split> {
    if x.nrows() == 0 || features.is_empty() {
        return None;
    }
    let (classes, yi) = encode_labels(y);
    let weights = effective_weights(y, Some(sample_weights), cfg.class_weights.as_ref());
    let cols = columns(x);
    let target = Target::Class {
        y: &yi,
        n_classes: classes.len(),
        criterion: cfg.criterion,
    };
    let mut b: Builder<'_, rand_chacha::ChaCha8Rng> = Builder::new(&cols, target, &weights, cfg, x.ncols(), None);
    let samples: Vec<u32> = (0..x.nrows() as u32).collect();
    let st = b.stats(&samples);
    let parent = b.node_impurity(&st);
    b.find_split(&samples, features, &st, parent)
}

/// A fitted tree. `classes` is empty for regression trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub root: TreeNode,
    pub classes: Vec<u32>,
    pub n_features: usize,
    pub config: TreeConfig,
}

/// Greedy CART classification tree.
pub fn fit_decision_tree(
    x: ArrayView2<'_, f64>,
    y: &[u32],
    sample_weights: Option<&[f64]>,
    cfg: &TreeConfig,
) -> Result<DecisionTree> {
    cfg.validate()?;
    check_fit_input(x, y.len(), sample_weights)?;
    let (classes, yi) = encode_labels(y);
    let weights = effective_weights(y, sample_weights, cfg.class_weights.as_ref());
    let cols = columns(x);
    let target = Target::Class {
        y: &yi,
        n_classes: classes.len(),
        criterion: cfg.criterion,
    };
    let mut samples: Vec<u32> = (0..x.nrows() as u32).filter(|&i| weights[i as usize] > 0.0).collect();
    let mut b: Builder<'_, rand_chacha::ChaCha8Rng> = Builder::new(&cols, target, &weights, cfg, x.ncols(), None);
    let root = b.grow(&mut samples, 0);
    Ok(DecisionTree {
        root,
        classes,
        n_features: x.ncols(),
        config: cfg.clone(),
    })
}

/// Regression tree splitting on weighted variance reduction.
pub fn fit_regression_tree(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    sample_weights: Option<&[f64]>,
    cfg: &TreeConfig,
) -> Result<DecisionTree> {
    cfg.validate()?;
    check_fit_input(x, y.len(), sample_weights)?;
    let weights: Vec<f64> = (0..y.len()).map(|i| sample_weights.map_or(1.0, |w| w[i])).collect();
    let cols = columns(x);
    let mut samples: Vec<u32> = (0..x.nrows() as u32).filter(|&i| weights[i as usize] > 0.0).collect();
    let mut b: Builder<'_, rand_chacha::ChaCha8Rng> =
        Builder::new(&cols, Target::Value { y }, &weights, cfg, x.ncols(), None);
    let root = b.grow(&mut samples, 0);
    Ok(DecisionTree {
        root,
        classes: Vec::new(),
        n_features: x.ncols(),
        config: cfg.clone(),
    })
}

pub(crate) fn check_predict_dims(expected: usize, x: ArrayView2<'_, f64>) -> Result<()> {
    if x.ncols() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: x.ncols(),
        });
    }
    Ok(())
}

/// Index of the largest value; the lowest index wins exact ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl DecisionTree {
    pub fn is_regression(&self) -> bool {
        self.classes.is_empty()
    }

    /// Normalised leaf histograms, columns in `self.classes` order.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_predict_dims(self.n_features, x)?;
        let k = self.classes.len();
        let mut out = Array2::zeros((x.nrows(), k));
        let mut row = vec![0.0; x.ncols()];
        let mut acc = vec![0.0; k];
        for (i, r) in x.rows().into_iter().enumerate() {
            row.iter_mut().zip(r).for_each(|(d, s)| *d = *s);
            acc.iter_mut().for_each(|a| *a = 0.0);
            self.root.accumulate_proba(&row, &mut acc);
            for c in 0..k {
                out[[i, c]] = acc[c];
            }
        }
        Ok(out)
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<u32>> {
        let p = self.predict_proba(x)?;
        Ok(p.rows()
            .into_iter()
            .map(|r| self.classes[argmax(r.as_slice().expect("standard layout"))])
            .collect())
    }

    pub fn predict_values(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        check_predict_dims(self.n_features, x)?;
        Ok(x.rows().into_iter().map(|r| self.root.value(&r.to_vec())).collect())
    }
}
