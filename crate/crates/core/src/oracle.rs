//! Exact-gradient ReLU perceptron used as the accuracy baseline and as the
//! reference direction for the spike-based gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    SoftmaxCe,
    Mse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// `n_out × n_in` per layer, input layer first.
    pub weights: Vec<Matrix>,
    /// Dropout probability of each layer's input neurons.
    pub dropout_ps: Vec<f64>,
    pub loss: LossKind,
    /// Multiplier applied to every pre-activation. `1/θ` reproduces the
    /// rate transfer of an integrate-and-fire unit with threshold `θ`.
    pub gain: f64,
}

/// Per-layer values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    /// Input of every layer (`inputs[0]` is the sample itself).
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activations of every layer.
    pub pre: Vec<Vec<f64>>,
    /// Softmax or linear output, per the loss kind.
    pub output: Vec<f64>,
}

impl MlpModel {
    pub fn new(weights: Vec<Matrix>, dropout_ps: Vec<f64>, loss: LossKind) -> Result<Self> {
        if weights.is_empty() || weights.len() != dropout_ps.len() {
            return Err(Error::Config("one dropout rate per weight layer required".into()));
        }
        if weights.windows(2).any(|w| w[0].rows() != w[1].cols()) {
            return Err(Error::Config("layer shapes do not chain".into()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InputDomain("non-finite weight".into()));
        }
        Ok(Self {
            weights,
            dropout_ps,
            loss,
            gain: 1.0,
        })
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub fn n_classes(&self) -> usize {
        self.weights.last().expect("nonempty").rows()
    }

    /// Target vector of a class: one-hot for cross-entropy, `on`/`off`
    /// levels for squared error.
    pub fn target(&self, label: usize, on: f64, off: f64) -> Vec<f64> {
        let n = self.n_classes();
        match self.loss {
            LossKind::SoftmaxCe => (0..n).map(|c| (c == label) as u8 as f64).collect(),
            LossKind::Mse => (0..n).map(|c| if c == label { on } else { off }).collect(),
        }
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Forward pass. With `masks` (training) dropped inputs are zeroed; without
/// them (inference) each layer's drive is scaled by `1 − p`.
pub fn mlp_forward_masked(model: &MlpModel, input: &[f64], masks: Option<&[Vec<bool>]>) -> Activations {
    let n_layers = model.weights.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers);
    let mut a = input.to_vec();
    for (l, w) in model.weights.iter().enumerate() {
        let scale = match masks {
            Some(m) => {
                a.iter_mut().zip(&m[l]).for_each(|(v, &keep)| {
                    if !keep {
                        *v = 0.0;
                    }
                });
                model.gain
            }
            None => model.gain * (1.0 - model.dropout_ps[l]),
        };
        let z: Vec<f64> = w.mul_vec(&a).into_iter().map(|v| v * scale).collect();
        inputs.push(a);
        a = if l + 1 < n_layers {
            z.iter().map(|v| v.max(0.0)).collect()
        } else {
            z.clone()
        };
        pre.push(z);
    }
    let output = match model.loss {
        LossKind::SoftmaxCe => softmax(pre.last().expect("nonempty")),
        LossKind::Mse => a,
    };
    Activations { inputs, pre, output }
}

pub fn mlp_forward(model: &MlpModel, input: &[f64]) -> Activations {
    mlp_forward_masked(model, input, None)
}

pub fn loss_value(model: &MlpModel, act: &Activations, target: &[f64]) -> f64 {
    match model.loss {
        LossKind::Mse => 0.5 * act.output.iter().zip(target).map(|(o, y)| (o - y).powi(2)).sum::<f64>(),
        LossKind::SoftmaxCe => {
            let z = act.pre.last().expect("nonempty");
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            -z.iter().zip(target).map(|(zi, y)| y * (zi - lse)).sum::<f64>()
        }
    }
}

pub fn mlp_loss(model: &MlpModel, input: &[f64], target: &[f64]) -> f64 {
    loss_value(model, &mlp_forward(model, input), target)
}

/// Loss and its analytic gradient with respect to every weight matrix.
pub fn mlp_loss_and_gradient(
    model: &MlpModel,
    input: &[f64],
    target: &[f64],
    masks: Option<&[Vec<bool>]>,
) -> (f64, Vec<Matrix>) {
    let act = mlp_forward_masked(model, input, masks);
    let loss = loss_value(model, &act, target);
    // Both losses give `output − target` at the pre-activation of the last layer.
    let mut dz: Vec<f64> = act.output.iter().zip(target).map(|(o, y)| o - y).collect();
    let mut grads = vec![Matrix::zeros(0, 0); model.weights.len()];
    for l in (0..model.weights.len()).rev() {
        let scale = match masks {
            Some(_) => model.gain,
            None => model.gain * (1.0 - model.dropout_ps[l]),
        };
        let w = &model.weights[l];
        let a = &act.inputs[l];
        let mut g = Matrix::zeros(w.rows(), w.cols());
        for (j, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (gi, &ai) in g.row_mut(j).iter_mut().zip(a) {
                *gi = scale * d * ai;
            }
        }
        grads[l] = g;
        if l > 0 {
            let da = w.tmul_vec(&dz);
            let z_below = &act.pre[l - 1];
            dz = da
                .iter()
                .zip(z_below)
                .enumerate()
                .map(|(i, (&v, &z))| {
                    let kept = masks.is_none_or(|m| m[l][i]);
                    if z > 0.0 && kept {
                        scale * v
                    } else {
                        0.0
                    }
                })
                .collect();
        }
    }
    (loss, grads)
}

pub fn mlp_backward(model: &MlpModel, input: &[f64], target: &[f64]) -> Vec<Matrix> {
    mlp_loss_and_gradient(model, input, target, None).1
}

pub fn predicted_class(output: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in output.iter().enumerate() {
        if v > output[best] {
            best = i;
        }
    }
    best
}

/// Cosine between the spike-based delta and the descent direction
/// `−ann_grad`, plus the fraction of matching signs among the top 10% of
/// entries by `|ann_grad|`.
pub fn gradient_correlation(snn_delta: &Matrix, ann_grad: &Matrix) -> Result<(f64, f64)> {
    if snn_delta.shape() != ann_grad.shape() {
        return Err(Error::Config("delta and gradient shapes differ".into()));
    }
    gradient_correlation_flat(snn_delta.as_slice(), ann_grad.as_slice())
}

pub fn gradient_correlation_flat(snn_delta: &[f64], ann_grad: &[f64]) -> Result<(f64, f64)> {
    if snn_delta.len() != ann_grad.len() || snn_delta.is_empty() {
        return Err(Error::Config("delta and gradient lengths differ".into()));
    }
    let dot: f64 = snn_delta.iter().zip(ann_grad).map(|(a, b)| -a * b).sum();
    let na = snn_delta.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = ann_grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity(format!(
            "zero norm (delta {na}, gradient {nb})"
        )));
    }
    let mut order: Vec<usize> = (0..ann_grad.len()).collect();
    order.sort_by(|&i, &j| ann_grad[j].abs().total_cmp(&ann_grad[i].abs()).then(i.cmp(&j)));
    let top = ann_grad.len().div_ceil(10);
    let agree = order[..top]
        .iter()
        .filter(|&&i| snn_delta[i] != 0.0 && snn_delta[i].signum() == -ann_grad[i].signum())
        .count();
    Ok((dot / (na * nb), agree as f64 / top as f64))
}
