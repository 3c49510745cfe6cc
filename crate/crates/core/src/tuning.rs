//! Randomized hyperparameter search for random forests with k-fold
//! cross-validation.

use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{accuracy, classification_report, confusion_matrix};
use crate::seed;
use crate::trees::{fit_random_forest, Criterion, ForestConfig};

/// Value lists for each searched forest hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParamSpace {
    pub n_estimators: Vec<usize>,
    pub criterion: Vec<Criterion>,
    pub max_depth: Vec<usize>,
    pub min_samples_split: Vec<usize>,
    pub min_samples_leaf: Vec<usize>,
}

impl Default for HyperParamSpace {
    fn default() -> Self {
        HyperParamSpace {
            n_estimators: vec![100, 200, 300],
            criterion: vec![Criterion::Gini, Criterion::Entropy],
            max_depth: vec![10, 20, 30],
            min_samples_split: vec![2, 3, 4],
            min_samples_leaf: vec![1, 2, 3],
        }
    }
}

/// One point of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub n_estimators: usize,
    pub criterion: Criterion,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
}

impl Candidate {
    pub fn apply(&self, base: &ForestConfig) -> ForestConfig {
        let mut cfg = base.clone();
        cfg.n_estimators = self.n_estimators;
        cfg.tree.criterion = self.criterion;
        cfg.tree.max_depth = Some(self.max_depth);
        cfg.tree.min_samples_split = self.min_samples_split;
        cfg.tree.min_samples_leaf = self.min_samples_leaf;
        cfg
    }
}

impl HyperParamSpace {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators.is_empty()
            || self.criterion.is_empty()
            || self.max_depth.is_empty()
            || self.min_samples_split.is_empty()
            || self.min_samples_leaf.is_empty()
        {
            return Err(Error::Config("every search axis needs at least one value".into()));
        }
        if self.n_estimators.contains(&0) {
            return Err(Error::Config("n_estimators values must be at least 1".into()));
        }
        if self.min_samples_split.iter().any(|v| *v < 2) {
            return Err(Error::Config("min_samples_split values must be at least 2".into()));
        }
        if self.min_samples_leaf.contains(&0) {
            return Err(Error::Config("min_samples_leaf values must be at least 1".into()));
        }
        Ok(())
    }

    pub fn grid_size(&self) -> usize {
        self.n_estimators.len()
            * self.criterion.len()
            * self.max_depth.len()
            * self.min_samples_split.len()
            * self.min_samples_leaf.len()
    }

    /// Grid point by mixed-radix index; `n_estimators` varies slowest and
    /// `min_samples_leaf` fastest.
    pub fn candidate(&self, mut index: usize) -> Candidate {
        let mut digit = |len: usize| {
            let d = index % len;
            index /= len;
            d
        };
        let leaf = digit(self.min_samples_leaf.len());
        let split = digit(self.min_samples_split.len());
        let depth = digit(self.max_depth.len());
        let crit = digit(self.criterion.len());
        let est = digit(self.n_estimators.len());
        Candidate {
            n_estimators: self.n_estimators[est],
            criterion: self.criterion[crit],
            max_depth: self.max_depth[depth],
            min_samples_split: self.min_samples_split[split],
            min_samples_leaf: self.min_samples_leaf[leaf],
        }
    }
}

/// `k` disjoint folds covering `0..n` after a seeded shuffle. The first
/// `n % k` folds hold one extra index.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::InvalidInput(format!(
            "k-fold needs 2 <= k <= n, got k={k}, n={n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

/// Grid indices of the candidates to evaluate, in evaluation order. Sampling
/// is without replacement; the whole grid comes back in grid order when
/// `n_iter` covers it.
pub fn sample_candidate_indices(space: &HyperParamSpace, n_iter: usize, seed: u64) -> Result<Vec<usize>> {
    space.validate()?;
    if n_iter == 0 {
        return Err(Error::Config("n_iter must be at least 1".into()));
    }
    let size = space.grid_size();
    if n_iter >= size {
        return Ok((0..size).collect());
    }
    Ok(rand::seq::index::sample(&mut seed::rng(seed), size, n_iter).into_vec())
}

pub fn sample_candidates(space: &HyperParamSpace, n_iter: usize, seed: u64) -> Result<Vec<Candidate>> {
    Ok(sample_candidate_indices(space, n_iter, seed)?
        .into_iter()
        .map(|i| space.candidate(i))
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    #[default]
    Accuracy,
    /// Recall of label 1 (the dangerous class).
    RecallDangerous,
}

impl fmt::Display for Scoring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scoring::Accuracy => "accuracy",
            Scoring::RecallDangerous => "recall_dangerous",
        })
    }
}

impl FromStr for Scoring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Scoring::Accuracy),
            "recall_dangerous" => Ok(Scoring::RecallDangerous),
            _ => Err(Error::Config(format!(
                "unknown scoring `{s}` (accuracy|recall_dangerous)"
            ))),
        }
    }
}

fn score(scoring: Scoring, y_true: &[u32], y_pred: &[u32]) -> Result<f64> {
    Ok(match scoring {
        Scoring::Accuracy => accuracy(y_true, y_pred),
        Scoring::RecallDangerous => {
            let mut labels: Vec<u32> = y_true.iter().chain(y_pred).copied().chain([1]).collect();
            labels.sort_unstable();
            labels.dedup();
            let report = classification_report(&confusion_matrix(y_true, y_pred, &labels)?);
            report.class(1).map_or(0.0, |c| c.recall)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    /// Position in the evaluation order.
    pub order: usize,
    pub grid_index: usize,
    pub params: Candidate,
    pub fold_scores: Vec<f64>,
    pub mean_score: f64,
    /// Population standard deviation of the fold scores.
    pub std_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub scoring: Scoring,
    pub folds: usize,
    pub seed: u64,
    /// In evaluation order.
    pub candidates: Vec<CandidateResult>,
    pub best_order: usize,
    pub best_params: Candidate,
    pub best_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub space: HyperParamSpace,
    pub n_iter: usize,
    pub folds: usize,
    pub seed: u64,
    pub scoring: Scoring,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            space: HyperParamSpace::default(),
            n_iter: 10,
            folds: 5,
            seed: 42,
            scoring: Scoring::Accuracy,
        }
    }
}

/// Cross-validated score of one forest configuration on fixed folds.
pub fn cross_validate(
    x: ArrayView2<'_, f64>,
    y: &[u32],
    folds: &[Vec<usize>],
    cfg: &ForestConfig,
    scoring: Scoring,
) -> Result<Vec<f64>> {
    folds
        .iter()
        .enumerate()
        .map(|(f, held_out)| {
            let train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, idx)| idx.iter().copied())
                .collect();
            let tx = x.select(Axis(0), &train);
            let ty: Vec<u32> = train.iter().map(|&i| y[i]).collect();
            let vx = x.select(Axis(0), held_out);
            let vy: Vec<u32> = held_out.iter().map(|&i| y[i]).collect();
            let model = fit_random_forest(tx.view(), &ty, cfg)?;
            score(scoring, &vy, &model.predict(vx.view())?)
        })
        .collect()
}

/// Evaluates sampled candidates with k-fold CV. Each candidate's forest seed
/// is derived from its grid index, so results do not depend on evaluation
/// order or thread count. The best mean wins; ties go to the earliest
/// evaluated candidate.
pub fn random_search(
    x: ArrayView2<'_, f64>,
    y: &[u32],
    search: &SearchConfig,
    base: &ForestConfig,
) -> Result<SearchResult> {
    if x.nrows() != y.len() {
        return Err(Error::InvalidInput(format!(
            "{} rows but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    let indices = sample_candidate_indices(&search.space, search.n_iter, search.seed)?;
    let folds = kfold_indices(x.nrows(), search.folds, search.seed)?;
    let candidates: Vec<CandidateResult> = indices
        .par_iter()
        .enumerate()
        .map(|(order, &grid_index)| {
            let params = search.space.candidate(grid_index);
            let mut cfg = params.apply(base);
            cfg.seed = seed::derive_seed(search.seed, grid_index as u64);
            let fold_scores = cross_validate(x, y, &folds, &cfg, search.scoring)?;
            let k = fold_scores.len() as f64;
            let mean_score = fold_scores.iter().sum::<f64>() / k;
            let std_score = (fold_scores.iter().map(|s| (s - mean_score).powi(2)).sum::<f64>() / k).sqrt();
            log::debug!("candidate {order} (grid {grid_index}): {mean_score:.4} ± {std_score:.4}");
            Ok(CandidateResult {
                order,
                grid_index,
                params,
                fold_scores,
                mean_score,
                std_score,
            })
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.mean_score > candidates[best].mean_score {
            best = i;
        }
    }
    Ok(SearchResult {
        scoring: search.scoring,
        folds: search.folds,
        seed: search.seed,
        best_order: best,
        best_params: candidates[best].params,
        best_score: candidates[best].mean_score,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn fold_sizes() {
        let f = kfold_indices(10, 5, 1).unwrap();
        assert!(f.iter().all(|f| f.len() == 2));
        let mut all: Vec<usize> = f.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let f = kfold_indices(11, 5, 1).unwrap();
        assert_eq!(f.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 2, 2, 2, 2]);
        assert_eq!(f, kfold_indices(11, 5, 1).unwrap());
        assert!(kfold_indices(3, 5, 1).is_err());
        assert!(kfold_indices(3, 1, 1).is_err());
    }

    #[test]
    fn default_grid_is_162() {
        let space = HyperParamSpace::default();
        assert_eq!(space.grid_size(), 162);
        let all = sample_candidates(&space, 162, 3).unwrap();
        assert_eq!(all.len(), 162);
        assert_eq!(all.iter().collect::<HashSet<_>>().len(), 162);
    }

    #[test]
    fn sampled_candidates_distinct() {
        let space = HyperParamSpace::default();
        for n in [1, 5, 40, 161, 500] {
            let c = sample_candidates(&space, n, 9).unwrap();
            assert_eq!(c.len(), n.min(162));
            assert_eq!(c.iter().collect::<HashSet<_>>().len(), c.len());
        }
        assert!(sample_candidates(&space, 0, 9).is_err());
    }

    #[test]
    fn grid_index_decodes_axes() {
        let space = HyperParamSpace::default();
        let c = space.candidate(0);
        assert_eq!((c.n_estimators, c.criterion, c.max_depth), (100, Criterion::Gini, 10));
        let c = space.candidate(1);
        assert_eq!(c.min_samples_leaf, 2);
        let c = space.candidate(161);
        assert_eq!(
            (
                c.n_estimators,
                c.criterion,
                c.max_depth,
                c.min_samples_split,
                c.min_samples_leaf
            ),
            (300, Criterion::Entropy, 30, 4, 3)
        );
    }

    #[test]
    fn constant_labels_pick_first() {
        let x = ndarray::Array2::from_shape_fn((20, 2), |(i, j)| (i * (j + 1)) as f64);
        let y = vec![1u32; 20];
        let search = SearchConfig {
            space: HyperParamSpace {
                n_estimators: vec![2, 3],
                ..HyperParamSpace::default()
            },
            n_iter: 6,
            folds: 4,
            ..SearchConfig::default()
        };
        let base = ForestConfig {
            balanced: false,
            ..ForestConfig::default()
        };
        let r = random_search(x.view(), &y, &search, &base).unwrap();
        assert_eq!(r.best_order, 0);
        assert!(r.candidates.iter().all(|c| c.mean_score == 1.0));
        assert_eq!(r.candidates.len(), 6);
    }
}
