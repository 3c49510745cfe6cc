//! Baseline learners: ordinary least squares, full-batch gradient-descent
//! logistic regression and Gaussian naive Bayes.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::ClassWeights;

fn check_dims(expected: usize, x: ArrayView2<'_, f64>) -> Result<()> {
    if x.ncols() == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected,
            got: x.ncols(),
        })
    }
}

/// Affine predictor `w·x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        check_dims(self.weights.len(), x)?;
        Ok(x.rows()
            .into_iter()
            .map(|row| self.intercept + row.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>())
            .collect())
    }
}

const RIDGE_JITTER: f64 = 1e-10;
const MAX_CONDITION: f64 = 1e14;

/// Least squares through the normal equations on centred data.
///
/// Centring decouples the intercept, so the solved system is the `d x d`
/// scatter matrix. A singular scatter matrix gets `1e-10` added to its
/// diagonal once; if that system is still numerically rank-deficient the
/// fit fails with the condition estimate.
pub fn fit_linear_regression(x: ArrayView2<'_, f64>, y: &[f64]) -> Result<LinearModel> {
    let (n, d) = x.dim();
    if y.len() != n {
        return Err(Error::InvalidInput(format!("{n} rows but {} targets", y.len())));
    }
    if n <= d {
        return Err(Error::InvalidInput(format!(
            "need more rows than features ({n} <= {d})"
        )));
    }
    let x_mean: Vec<f64> = x.columns().into_iter().map(|c| c.sum() / n as f64).collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;

    let mut scatter = DMatrix::<f64>::zeros(d, d);
    let mut xty = DVector::<f64>::zeros(d);
    let mut centred = vec![0.0; d];
    for (row, &yi) in x.rows().into_iter().zip(y) {
        for j in 0..d {
            centred[j] = row[j] - x_mean[j];
        }
        let dy = yi - y_mean;
        for a in 0..d {
            xty[a] += centred[a] * dy;
            for b in a..d {
                scatter[(a, b)] += centred[a] * centred[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            scatter[(a, b)] = scatter[(b, a)];
        }
    }

    let weights = if d == 0 {
        DVector::zeros(0)
    } else {
        solve_normal_equations(scatter, &xty)?
    };
    let intercept = y_mean - weights.iter().zip(&x_mean).map(|(w, m)| w * m).sum::<f64>();
    let model = LinearModel {
        weights: weights.iter().copied().collect(),
        intercept,
    };
    if !model.intercept.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Singular {
            condition: f64::INFINITY,
        });
    }
    Ok(model)
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

fn solve_normal_equations(scatter: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if condition_estimate(&scatter) <= MAX_CONDITION {
        if let Some(chol) = scatter.clone().cholesky() {
            return Ok(chol.solve(rhs));
        }
    }
    let d = scatter.nrows();
    let jittered = scatter + DMatrix::<f64>::identity(d, d) * RIDGE_JITTER;
    let condition = condition_estimate(&jittered);
    if condition > MAX_CONDITION {
        return Err(Error::Singular { condition });
    }
    jittered
        .cholesky()
        .map(|c| c.solve(rhs))
        .ok_or(Error::Singular { condition })
}

pub fn mean_squared_error(y: &[f64], y_hat: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

/// `1 - SS_res / SS_tot`; a constant target gives 0.
pub fn r_squared(y: &[f64], y_hat: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return 0.0;
    }
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    1.0 - ss_res / ss_tot
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once the gradient's infinity norm drops below this.
    pub tolerance: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            learning_rate: 0.1,
            max_iters: 1000,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub config: LogisticConfig,
    pub iterations: usize,
    /// Loss after every accepted step, starting with the initial loss.
    #[serde(skip)]
    pub loss_history: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LogisticModel {
    pub fn zeros(d: usize) -> LogisticModel {
        LogisticModel {
            weights: vec![0.0; d],
            intercept: 0.0,
            config: LogisticConfig::default(),
            iterations: 0,
            loss_history: Vec::new(),
        }
    }

    /// Probability of class 1 per row.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        check_dims(self.weights.len(), x)?;
        Ok(x.rows()
            .into_iter()
            .map(|row| sigmoid(self.intercept + row.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>()))
            .collect())
    }
}

/// Weighted mean binary cross-entropy and its gradient.
///
/// Returns `(loss, d loss / d weights, d loss / d intercept)`, where the loss
/// is `(1/n) Σ s_i [softplus(z_i) - y_i z_i]`.
pub fn logistic_loss_grad(
    weights: &[f64],
    intercept: f64,
    x: ArrayView2<'_, f64>,
    y: &[u32],
    sample_weights: &[f64],
) -> (f64, Vec<f64>, f64) {
    let n = x.nrows().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; weights.len()];
    let mut grad_b = 0.0;
    for ((row, &yi), &s) in x.rows().into_iter().zip(y).zip(sample_weights) {
        let z = intercept + row.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>();
        let t = f64::from(yi);
        loss += s * (softplus(z) - t * z);
        let r = s * (sigmoid(z) - t);
        for (g, a) in grad.iter_mut().zip(row) {
            *g += r * a;
        }
        grad_b += r;
    }
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad, grad_b / n)
}

/// Full-batch gradient descent on the class-weighted cross-entropy.
///
/// A step that would raise the loss is rejected and the learning rate halved,
/// so the accepted loss sequence never increases.
pub fn fit_logistic_regression(
    x: ArrayView2<'_, f64>,
    y: &[u32],
    class_weights: Option<&ClassWeights>,
    cfg: LogisticConfig,
) -> Result<LogisticModel> {
    if y.len() != x.nrows() {
        return Err(Error::InvalidInput(format!(
            "{} rows but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if let Some(bad) = y.iter().find(|&&v| v > 1) {
        return Err(Error::InvalidInput(format!(
            "logistic regression needs 0/1 labels, found {bad}"
        )));
    }
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(Error::InvalidInput(
            "logistic regression needs both classes present".into(),
        ));
    }
    let sw: Vec<f64> = match class_weights {
        Some(cw) => cw.sample_weights(y),
        None => vec![1.0; y.len()],
    };

    let d = x.ncols();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut lr = cfg.learning_rate;
    let (mut loss, mut grad, mut grad_b) = logistic_loss_grad(&w, b, x, y, &sw);
    let mut history = vec![loss];
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let gmax = grad.iter().fold(grad_b.abs(), |m, g| m.max(g.abs()));
        if gmax < cfg.tolerance || lr < 1e-300 {
            break;
        }
        iterations += 1;
        let trial_w: Vec<f64> = w.iter().zip(&grad).map(|(wi, gi)| wi - lr * gi).collect();
        let trial_b = b - lr * grad_b;
        let (trial_loss, trial_grad, trial_grad_b) = logistic_loss_grad(&trial_w, trial_b, x, y, &sw);
        if trial_loss <= loss {
            w = trial_w;
            b = trial_b;
            loss = trial_loss;
            grad = trial_grad;
            grad_b = trial_grad_b;
            history.push(loss);
        } else {
            lr *= 0.5;
        }
    }
    Ok(LogisticModel {
        weights: w,
        intercept: b,
        config: cfg,
        iterations,
        loss_history: history,
    })
}

/// Gaussian naive Bayes over every feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    pub classes: Vec<u32>,
    pub priors: Vec<f64>,
    /// `means[c][j]` for class index `c`, feature `j`.
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub epsilon: f64,
}

/// Sum of values in sorted order, so the result does not depend on row order.
fn ordered_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// Empirical priors plus per-class Gaussian parameters. Every variance gets
/// `1e-9 * max feature variance` added. Class weights are not used.
pub fn fit_gaussian_nb(x: ArrayView2<'_, f64>, y: &[u32]) -> Result<NaiveBayesModel> {
    let (n, d) = x.dim();
    if y.len() != n || n == 0 {
        return Err(Error::InvalidInput(format!("{n} rows but {} labels", y.len())));
    }
    let mut classes: Vec<u32> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();

    let mut max_var: f64 = 0.0;
    for col in x.columns() {
        let mut vals = col.to_vec();
        let mean = ordered_sum(&mut vals) / n as f64;
        let mut sq: Vec<f64> = vals.iter().map(|v| (v - mean) * (v - mean)).collect();
        max_var = max_var.max(ordered_sum(&mut sq) / n as f64);
    }
    let epsilon = if max_var > 0.0 { 1e-9 * max_var } else { 1e-9 };

    let mut priors = Vec::with_capacity(classes.len());
    let mut means = Vec::with_capacity(classes.len());
    let mut variances = Vec::with_capacity(classes.len());
    for &c in &classes {
        let rows: Vec<usize> = (0..n).filter(|&i| y[i] == c).collect();
        let nc = rows.len() as f64;
        priors.push(nc / n as f64);
        let mut mu = Vec::with_capacity(d);
        let mut var = Vec::with_capacity(d);
        for j in 0..d {
            let mut vals: Vec<f64> = rows.iter().map(|&i| x[[i, j]]).collect();
            let m = ordered_sum(&mut vals) / nc;
            let mut sq: Vec<f64> = vals.iter().map(|v| (v - m) * (v - m)).collect();
            mu.push(m);
            var.push(ordered_sum(&mut sq) / nc + epsilon);
        }
        means.push(mu);
        variances.push(var);
    }
    Ok(NaiveBayesModel {
        classes,
        priors,
        means,
        variances,
        epsilon,
    })
}

impl NaiveBayesModel {
    pub fn n_features(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// Normalised class posteriors, one row per sample, columns in
    /// `self.classes` order.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_dims(self.n_features(), x)?;
        let k = self.classes.len();
        let mut out = Array2::zeros((x.nrows(), k));
        let mut log_post = vec![0.0; k];
        for (i, row) in x.rows().into_iter().enumerate() {
            for (c, slot) in log_post.iter_mut().enumerate() {
                let mut lp = self.priors[c].ln();
                for (j, &v) in row.iter().enumerate() {
                    let var = self.variances[c][j];
                    let diff = v - self.means[c][j];
                    lp -= 0.5 * ((2.0 * std::f64::consts::PI * var).ln() + diff * diff / var);
                }
                *slot = lp;
            }
            let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = log_post.iter().map(|lp| (lp - max).exp()).sum();
            for c in 0..k {
                out[[i, c]] = (log_post[c] - max).exp() / total;
            }
        }
        Ok(out)
    }
}
