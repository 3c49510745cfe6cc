//! Bagged random forests with soft voting.

use std::fmt;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{
    argmax, check_predict_dims, columns, effective_weights, encode_labels, Builder, Target, TreeConfig, TreeNode,
};
use crate::error::{Error, Result};
use crate::featurize::ClassWeights;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForestMode {
    Classify,
    Regress,
}

impl fmt::Display for ForestMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ForestMode::Classify => "classify",
            ForestMode::Regress => "regress",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_estimators: usize,
    /// Features tried per node. `None` means `floor(sqrt(d))` for
    /// classification and `d` for regression.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
    /// Derive balanced class weights from the training labels when
    /// `tree.class_weights` is unset.
    pub balanced: bool,
    pub tree: TreeConfig,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_estimators: 100,
            max_features: None,
            bootstrap: true,
            seed: 42,
            balanced: true,
            tree: TreeConfig::default(),
        }
    }
}

impl ForestConfig {
    pub fn resolve_max_features(&self, d: usize, mode: ForestMode) -> usize {
        let m = self.max_features.unwrap_or(match mode {
            ForestMode::Classify => (d as f64).sqrt().floor() as usize,
            ForestMode::Regress => d,
        });
        m.clamp(1, d.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 {
            return Err(Error::Config("n_estimators must be at least 1".into()));
        }
        if self.max_features == Some(0) {
            return Err(Error::Config("max_features must be at least 1".into()));
        }
        self.tree.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub mode: ForestMode,
    pub trees: Vec<TreeNode>,
    pub classes: Vec<u32>,
    pub n_features: usize,
    pub n_estimators: usize,
    pub max_features: usize,
    pub bootstrap: bool,
    pub base_seed: u64,
    pub tree_config: TreeConfig,
}

/// Bootstrap multiplicities for `n` rows, or all ones.
fn draw_counts<R: Rng>(rng: &mut R, n: usize, bootstrap: bool) -> Vec<f64> {
    if !bootstrap {
        return vec![1.0; n];
    }
    let mut counts = vec![0.0; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1.0;
    }
    counts
}

fn grow_forest<'a>(
    cols: &[Vec<f64>],
    n: usize,
    base_weights: &[f64],
    target: impl Fn() -> Target<'a> + Sync,
    cfg: &ForestConfig,
    max_features: usize,
) -> Vec<TreeNode> {
    (0..cfg.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(cfg.seed.wrapping_add(t as u64));
            let counts = draw_counts(&mut rng, n, cfg.bootstrap);
            let weights: Vec<f64> = counts.iter().zip(base_weights).map(|(c, w)| c * w).collect();
            let mut samples: Vec<u32> = (0..n as u32).filter(|&i| weights[i as usize] > 0.0).collect();
            let mut b = Builder::new(cols, target(), &weights, &cfg.tree, max_features, Some(&mut rng));
            b.grow(&mut samples, 0)
        })
        .collect()
}

fn check_rows(x: ArrayView2<'_, f64>, n_targets: usize) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::InvalidInput("cannot fit a forest on zero rows".into()));
    }
    if x.nrows() != n_targets {
        return Err(Error::InvalidInput(format!(
            "{} rows but {n_targets} targets",
            x.nrows()
        )));
    }
    Ok(())
}

/// Classification forest. Trees are grown in parallel; the result does not
/// depend on the number of worker threads.
pub fn fit_random_forest(x: ArrayView2<'_, f64>, y: &[u32], cfg: &ForestConfig) -> Result<ForestModel> {
    cfg.validate()?;
    check_rows(x, y.len())?;
    let (classes, yi) = encode_labels(y);
    let balanced;
    let cw = match (&cfg.tree.class_weights, cfg.balanced) {
        (Some(w), _) => Some(w),
        (None, true) => {
            balanced = ClassWeights::balanced(y)?;
            Some(&balanced)
        }
        (None, false) => None,
    };
    let base = effective_weights(y, None, cw);
    let cols = columns(x);
    let max_features = cfg.resolve_max_features(x.ncols(), ForestMode::Classify);
    let k = classes.len();
    let trees = grow_forest(
        &cols,
        x.nrows(),
        &base,
        || Target::Class {
            y: &yi,
            n_classes: k,
            criterion: cfg.tree.criterion,
        },
        cfg,
        max_features,
    );
    let mut tree_config = cfg.tree.clone();
    tree_config.class_weights = cw.cloned();
    Ok(ForestModel {
        mode: ForestMode::Classify,
        trees,
        classes,
        n_features: x.ncols(),
        n_estimators: cfg.n_estimators,
        max_features,
        bootstrap: cfg.bootstrap,
        base_seed: cfg.seed,
        tree_config,
    })
}

/// Regression forest averaging per-tree leaf means.
pub fn fit_random_forest_regressor(x: ArrayView2<'_, f64>, y: &[f64], cfg: &ForestConfig) -> Result<ForestModel> {
    cfg.validate()?;
    check_rows(x, y.len())?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("regression targets must be finite".into()));
    }
    let base = vec![1.0; y.len()];
    let cols = columns(x);
    let max_features = cfg.resolve_max_features(x.ncols(), ForestMode::Regress);
    let trees = grow_forest(&cols, x.nrows(), &base, || Target::Value { y }, cfg, max_features);
    let mut tree_config = cfg.tree.clone();
    tree_config.class_weights = None;
    Ok(ForestModel {
        mode: ForestMode::Regress,
        trees,
        classes: Vec::new(),
        n_features: x.ncols(),
        n_estimators: cfg.n_estimators,
        max_features,
        bootstrap: cfg.bootstrap,
        base_seed: cfg.seed,
        tree_config,
    })
}

impl ForestModel {
    /// Mean of per-tree class distributions, columns in `self.classes` order.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_predict_dims(self.n_features, x)?;
        if self.mode != ForestMode::Classify {
            return Err(Error::InvalidInput(
                "regression forest has no class probabilities".into(),
            ));
        }
        let k = self.classes.len();
        let t = self.trees.len() as f64;
        let rows: Vec<Vec<f64>> = x
            .rows()
            .into_iter()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|r| {
                let row = r.to_vec();
                let mut acc = vec![0.0; k];
                for tree in &self.trees {
                    tree.accumulate_proba(&row, &mut acc);
                }
                acc.iter_mut().for_each(|a| *a /= t);
                acc
            })
            .collect();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Ok(Array2::from_shape_vec((x.nrows(), k), flat).expect("shape matches"))
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
        if self.mode != ForestMode::Regress {
            return Err(Error::InvalidInput(
                "classification forest has no regression values".into(),
            ));
        }
        let t = self.trees.len() as f64;
        Ok(x.rows()
            .into_iter()
            .map(|r| {
                let row = r.to_vec();
                self.trees.iter().map(|tr| tr.value(&row)).sum::<f64>() / t
            })
            .collect())
    }
}
