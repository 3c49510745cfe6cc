//! Feed-forward neural network: ReLU hidden layers, sigmoid or softmax head,
//! trained with Adam on class-weighted cross-entropy.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{classification_report, confusion_matrix};
use crate::featurize::ClassWeights;
use crate::seed;

/// Probabilities are clamped to `[P_MIN, 1 - P_MIN]` inside the logarithm.
pub const P_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// One sigmoid unit giving P(classes[1]).
    Sigmoid,
    /// One softmax unit per class.
    Softmax,
}

/// Fully connected layer: `z = a · weights + biases`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `inputs x outputs`.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub head: Head,
    /// Label of each output class, ascending.
    pub classes: Vec<u32>,
    pub layers: Vec<DenseLayer>,
}

fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, limit: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit))
}

/// He-uniform hidden layers, Glorot-uniform output layer, zero biases.
pub fn init_mlp(d: usize, hidden: &[usize], classes: &[u32], seed: u64) -> Result<MlpModel> {
    if d == 0 {
        return Err(Error::InvalidInput("input dimension must be at least 1".into()));
    }
    if hidden.contains(&0) {
        return Err(Error::Config("hidden layer widths must be at least 1".into()));
    }
    if classes.len() < 2 || classes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(
            "need at least two distinct classes in ascending order".into(),
        ));
    }
    let (head, out) = if classes.len() == 2 {
        (Head::Sigmoid, 1)
    } else {
        (Head::Softmax, classes.len())
    };
    let mut rng = seed::rng(seed);
    let mut sizes = vec![d];
    sizes.extend_from_slice(hidden);
    sizes.push(out);
    let n_layers = sizes.len() - 1;
    let layers = sizes
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = if i + 1 < n_layers {
                (6.0 / fan_in as f64).sqrt()
            } else {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            };
            DenseLayer {
                weights: uniform_matrix(&mut rng, fan_in, fan_out, limit),
                biases: Array1::zeros(fan_out),
            }
        })
        .collect();
    Ok(MlpModel {
        head,
        classes: classes.to_vec(),
        layers,
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Activations kept for backpropagation.
pub struct ForwardCache {
    /// Input followed by each hidden layer's post-ReLU output.
    pub activations: Vec<Array2<f64>>,
    /// Output probabilities, `n x 1` for sigmoid and `n x k` for softmax.
    pub output: Array2<f64>,
}

impl MlpModel {
    pub fn n_inputs(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Batch forward pass.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        if x.ncols() != self.n_inputs() {
            return Err(Error::DimensionMismatch {
                expected: self.n_inputs(),
                got: x.ncols(),
            });
        }
        let mut activations = vec![x.to_owned()];
        let last = self.layers.len() - 1;
        let mut output = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = activations[i].dot(&layer.weights) + &layer.biases;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
                activations.push(z);
            } else {
                match self.head {
                    Head::Sigmoid => z.mapv_inplace(sigmoid),
                    Head::Softmax => softmax_rows(&mut z),
                }
                output = Some(z);
            }
        }
        Ok(ForwardCache {
            activations,
            output: output.expect("at least one layer"),
        })
    }

    /// Per-class probabilities, one column per entry of `classes`.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let out = self.forward(x)?.output;
        Ok(match self.head {
            Head::Sigmoid => {
                let mut p = Array2::zeros((out.nrows(), 2));
                for (i, v) in out.column(0).iter().enumerate() {
                    p[[i, 0]] = 1.0 - v;
                    p[[i, 1]] = *v;
                }
                p
            }
            Head::Softmax => out,
        })
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<u32>> {
        let out = self.forward(x)?.output;
        Ok(match self.head {
            Head::Sigmoid => out
                .column(0)
                .iter()
                .map(|p| self.classes[usize::from(*p >= 0.5)])
                .collect(),
            Head::Softmax => out
                .rows()
                .into_iter()
                .map(|r| self.classes[crate::trees::argmax(&r.to_vec())])
                .collect(),
        })
    }

    /// Parameters layer by layer: weights row-major, then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            v.extend(l.weights.iter());
            v.extend(l.biases.iter());
        }
        v
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                got: flat.len(),
            });
        }
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = flat[k];
                k += 1;
            }
            for b in l.biases.iter_mut() {
                *b = flat[k];
                k += 1;
            }
        }
        Ok(())
    }

    fn class_index(&self, label: u32) -> Result<usize> {
        self.classes
            .binary_search(&label)
            .map_err(|_| Error::InvalidInput(format!("label {label} is not one of {:?}", self.classes)))
    }
}

/// Mean class-weighted cross-entropy over the batch and its gradient in
/// [`MlpModel::to_flat`] order.
pub fn mlp_loss_grad(
    model: &MlpModel,
    x: ArrayView2<'_, f64>,
    y: &[u32],
    class_weights: Option<&ClassWeights>,
) -> Result<(f64, Vec<f64>)> {
    let n = x.nrows();
    if n == 0 || y.len() != n {
        return Err(Error::InvalidInput(
            "batch must be non-empty with one label per row".into(),
        ));
    }
    let cache = model.forward(x)?;
    let idx: Vec<usize> = y.iter().map(|&l| model.class_index(l)).collect::<Result<_>>()?;
    let w: Vec<f64> = y.iter().map(|&l| class_weights.map_or(1.0, |c| c.weight(l))).collect();
    let nf = n as f64;

    let out = &cache.output;
    let mut loss = 0.0;
    let mut delta = Array2::zeros(out.raw_dim());
    match model.head {
        Head::Sigmoid => {
            for i in 0..n {
                let p = out[[i, 0]];
                let target = idx[i] as f64;
                let q = if target == 1.0 { p } else { 1.0 - p };
                let qc = q.clamp(P_MIN, 1.0 - P_MIN);
                loss -= w[i] * qc.ln();
                if q == qc {
                    delta[[i, 0]] = w[i] * (p - target) / nf;
                }
            }
        }
        Head::Softmax => {
            for i in 0..n {
                let q = out[[i, idx[i]]];
                let qc = q.clamp(P_MIN, 1.0 - P_MIN);
                loss -= w[i] * qc.ln();
                if q == qc {
                    for j in 0..out.ncols() {
                        let t = if j == idx[i] { 1.0 } else { 0.0 };
                        delta[[i, j]] = w[i] * (out[[i, j]] - t) / nf;
                    }
                }
            }
        }
    }
    loss /= nf;

    let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(model.layers.len());
    for (li, layer) in model.layers.iter().enumerate().rev() {
        let a = &cache.activations[li];
        let gw = a.t().dot(&delta);
        let gb = delta.sum_axis(Axis(0));
        grads.push((gw, gb));
        if li > 0 {
            let mut next = delta.dot(&layer.weights.t());
            next.zip_mut_with(a, |d, act| {
                if *act <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = next;
        }
    }
    grads.reverse();
    let mut flat = Vec::with_capacity(model.n_params());
    for (gw, gb) in grads {
        flat.extend(gw.iter());
        flat.extend(gb.iter());
    }
    Ok((loss, flat))
}

/// Bias-corrected Adam moments over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, learning_rate: f64) -> AdamState {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                got: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grads.len()
                },
            });
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Apply balanced class weights when `class_weights` is unset.
    pub balanced: bool,
    pub class_weights: Option<ClassWeights>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            learning_rate: 0.004,
            hidden: vec![15, 15],
            seed: 42,
            balanced: true,
            class_weights: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be at least 1".into()));
        }
        Ok(())
    }
}

/// Metrics for one split after one epoch. Precision and recall are for the
/// positive class under a sigmoid head and macro-averaged under softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

pub fn write_history_csv<W: std::io::Write>(history: &[EpochMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for h in history {
        w.serialize(h)?;
    }
    w.flush()?;
    Ok(())
}

fn epoch_metrics(
    model: &MlpModel,
    x: ArrayView2<'_, f64>,
    y: &[u32],
    cw: Option<&ClassWeights>,
    epoch: usize,
    split: &str,
) -> Result<EpochMetrics> {
    let (loss, _) = mlp_loss_grad(model, x, y, cw)?;
    let pred = model.predict(x)?;
    let report = classification_report(&confusion_matrix(y, &pred, &model.classes)?);
    let (precision, recall) = match model.head {
        Head::Sigmoid => {
            let c = &report.classes[1];
            (c.precision, c.recall)
        }
        Head::Softmax => (report.macro_avg.precision, report.macro_avg.recall),
    };
    Ok(EpochMetrics {
        epoch,
        split: split.to_string(),
        loss,
        accuracy: report.accuracy,
        precision,
        recall,
    })
}

/// Minibatch Adam training. The validation set is only scored, never
/// trained on. Losses in the history use the training class weights.
pub fn train_mlp(
    mut model: MlpModel,
    x: ArrayView2<'_, f64>,
    y: &[u32],
    validation: Option<(ArrayView2<'_, f64>, &[u32])>,
    cfg: &TrainConfig,
) -> Result<(MlpModel, Vec<EpochMetrics>)> {
    cfg.validate()?;
    let n = x.nrows();
    if n == 0 || y.len() != n {
        return Err(Error::InvalidInput(
            "training set must be non-empty with one label per row".into(),
        ));
    }
    let balanced;
    let cw = match (&cfg.class_weights, cfg.balanced) {
        (Some(w), _) => Some(w),
        (None, true) => {
            balanced = ClassWeights::balanced(y)?;
            Some(&balanced)
        }
        (None, false) => None,
    };
    let mut rng = seed::rng(cfg.seed);
    let mut params = model.to_flat();
    let mut adam = AdamState::new(params.len(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::new();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let bx = x.select(Axis(0), batch);
            let by: Vec<u32> = batch.iter().map(|&i| y[i]).collect();
            let (_, g) = mlp_loss_grad(&model, bx.view(), &by, cw)?;
            adam.step(&mut params, &g)?;
            model.load_flat(&params)?;
        }
        history.push(epoch_metrics(&model, x, y, cw, epoch, "train")?);
        if let Some((vx, vy)) = validation {
            history.push(epoch_metrics(&model, vx, vy, cw, epoch, "validation")?);
        }
        log::debug!("epoch {epoch}: {:?}", history.last());
    }
    Ok((model, history))
}
