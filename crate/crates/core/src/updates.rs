//! Weight-update paths.
//!
//! All three modes produce deltas that are integer multiples of a fixed step:
//!
//! | mode            | step            | units per sample                          |
//! |-----------------|-----------------|-------------------------------------------|
//! | RPU coincidence | `η / T_s`       | `Σ_t (δ⁺_j(t) − δ⁻_j(t)) · x_i(t)`        |
//! | rate            | `η / T_s²`      | `(Σ δ⁺_j − Σ δ⁻_j) · Σ x_i`               |
//! | quantized rate  | `η / levels`    | rate units snapped to the coarser grid     |
//!
//! The accumulator therefore stores integer unit counts, which keeps the
//! granularity exact and makes batch reduction independent of summation
//! order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{CompositeLayer, SampleActivity};
use crate::spike::SpikeTrain;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum UpdateMode {
    Rpu,
    Rate,
    QuantizedRate { levels: u32 },
}

impl UpdateMode {
    pub fn validate(&self) -> Result<()> {
        match self {
            UpdateMode::QuantizedRate { levels: 0 } => {
                Err(Error::Config("quantization levels must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn tag(&self) -> String {
        match self {
            UpdateMode::Rpu => "rpu".into(),
            UpdateMode::Rate => "rate".into(),
            UpdateMode::QuantizedRate { levels } => format!("quantized-rate-{levels}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub eta: f64,
    pub batch_size: usize,
    pub t_s: usize,
    pub reduction: BatchReduction,
}

/// How per-sample deltas of a batch are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BatchReduction {
    /// Divide the summed delta by the number of samples.
    #[default]
    Mean,
    /// Apply the summed delta as is.
    Sum,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.t_s == 0 {
            return Err(Error::Config("t_s must be at least 1".into()));
        }
        Ok(())
    }

    /// Value of one accumulator unit under `mode`.
    pub fn step(&self, mode: UpdateMode) -> f64 {
        let t = self.t_s as f64;
        match mode {
            UpdateMode::Rpu => self.eta / t,
            UpdateMode::Rate => self.eta / (t * t),
            UpdateMode::QuantizedRate { levels } => self.eta / levels as f64,
        }
    }
}

/// Row-major integer matrix of update units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i64>,
}

impl UnitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> i64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[i64] {
        &self.data
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&u| u == 0)
    }

    fn row_mut(&mut self, r: usize) -> &mut [i64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn add_assign(&mut self, other: &UnitMatrix) {
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    fn clear(&mut self) {
        self.data.fill(0);
    }

    pub fn to_matrix(&self, step: f64) -> Matrix {
        Matrix::from_vec(
            self.rows,
            self.cols,
            self.data.iter().map(|&u| u as f64 * step).collect(),
        )
    }
}

fn check_update_shapes(
    units: Option<&UnitMatrix>,
    pre: &SpikeTrain,
    grad_plus: &SpikeTrain,
    grad_minus: &SpikeTrain,
) -> Result<()> {
    grad_plus.check_same_shape(grad_minus)?;
    if pre.t_s() != grad_plus.t_s() {
        return Err(Error::Config("pre and gradient trains differ in length".into()));
    }
    if let Some(u) = units {
        if u.shape() != (grad_plus.n_neurons(), pre.n_neurons()) {
            return Err(Error::Config(format!(
                "accumulator is {}x{}, trains imply {}x{}",
                u.rows,
                u.cols,
                grad_plus.n_neurons(),
                pre.n_neurons()
            )));
        }
    }
    Ok(())
}

/// Add the spike-coincidence counts of one sample to `units` (step `η/T_s`).
///
/// Only AND-coincidences of binary spikes are counted; no rates are formed.
pub fn rpu_accumulate(
    units: &mut UnitMatrix,
    pre: &SpikeTrain,
    grad_plus: &SpikeTrain,
    grad_minus: &SpikeTrain,
) -> Result<()> {
    check_update_shapes(Some(units), pre, grad_plus, grad_minus)?;
    let pre_events = pre.events_by_time();
    for j in 0..grad_plus.n_neurons() {
        let (gp, gm) = (grad_plus.row(j), grad_minus.row(j));
        if gp.iter().chain(gm).all(|&s| s == 0) {
            continue;
        }
        let row = units.row_mut(j);
        for (t, events) in pre_events.iter().enumerate() {
            if gp[t] != 0 {
                events.iter().for_each(|&i| row[i as usize] += 1);
            }
            if gm[t] != 0 {
                events.iter().for_each(|&i| row[i as usize] -= 1);
            }
        }
    }
    Ok(())
}

/// Net gradient spike counts and presynaptic spike counts.
fn rate_counts(pre: &SpikeTrain, grad_plus: &SpikeTrain, grad_minus: &SpikeTrain) -> (Vec<i64>, Vec<i64>) {
    let net = (0..grad_plus.n_neurons())
        .map(|j| grad_plus.count(j) as i64 - grad_minus.count(j) as i64)
        .collect();
    let pre = pre.counts().into_iter().map(i64::from).collect();
    (net, pre)
}

/// Rate-based units (step `η/T_s²`): outer product of spike counts.
pub fn rate_units(pre: &SpikeTrain, grad_plus: &SpikeTrain, grad_minus: &SpikeTrain) -> Result<UnitMatrix> {
    check_update_shapes(None, pre, grad_plus, grad_minus)?;
    let (net, pre_counts) = rate_counts(pre, grad_plus, grad_minus);
    let mut units = UnitMatrix::zeros(net.len(), pre_counts.len());
    add_outer(&mut units, &net, &pre_counts, |u| u);
    Ok(units)
}

fn add_outer(units: &mut UnitMatrix, net: &[i64], pre: &[i64], map: impl Fn(i64) -> i64) {
    for (j, &n) in net.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let row = units.row_mut(j);
        for (u, &p) in row.iter_mut().zip(pre) {
            if p != 0 {
                *u += map(n * p);
            }
        }
    }
}

/// `η · (net gradient rate) ⊗ (presynaptic rate)`.
pub fn rate_update(
    pre: &SpikeTrain,
    grad_plus: &SpikeTrain,
    grad_minus: &SpikeTrain,
    opt: &OptimizerConfig,
) -> Result<Matrix> {
    if pre.t_s() != opt.t_s {
        return Err(Error::Config("train length differs from optimizer t_s".into()));
    }
    Ok(rate_units(pre, grad_plus, grad_minus)?.to_matrix(opt.step(UpdateMode::Rate)))
}

/// Integer division rounding to nearest, ties to even. `den > 0`.
pub fn div_round_half_even(num: i64, den: i64) -> i64 {
    debug_assert!(den > 0);
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
    }
}

/// Snap every entry to the nearest multiple of `η / levels` (ties to even).
pub fn quantize_delta(delta: &Matrix, eta: f64, levels: u32) -> Result<Matrix> {
    if levels == 0 {
        return Err(Error::Config("quantization levels must be at least 1".into()));
    }
    let step = eta / levels as f64;
    Ok(Matrix::from_vec(
        delta.rows(),
        delta.cols(),
        delta
            .as_slice()
            .iter()
            .map(|&d| (d * levels as f64 / eta).round_ties_even() * step)
            .collect(),
    ))
}

/// Per-layer update buffer for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateAccumulator {
    mode: UpdateMode,
    opt: OptimizerConfig,
    layers: Vec<UnitMatrix>,
    samples: usize,
}

impl UpdateAccumulator {
    /// `shapes` are `(n_out, n_in)` per weight layer.
    pub fn new(mode: UpdateMode, opt: OptimizerConfig, shapes: &[(usize, usize)]) -> Result<Self> {
        mode.validate()?;
        opt.validate()?;
        Ok(Self {
            mode,
            opt,
            layers: shapes.iter().map(|&(r, c)| UnitMatrix::zeros(r, c)).collect(),
            samples: 0,
        })
    }

    pub fn for_network(mode: UpdateMode, opt: OptimizerConfig, net: &[CompositeLayer]) -> Result<Self> {
        let shapes: Vec<_> = net.iter().map(|l| l.weights().shape()).collect();
        Self::new(mode, opt, &shapes)
    }

    pub fn mode(&self) -> UpdateMode {
        self.mode
    }

    pub fn step(&self) -> f64 {
        self.opt.step(self.mode)
    }

    pub fn samples_accumulated(&self) -> usize {
        self.samples
    }

    pub fn units(&self, layer: usize) -> &UnitMatrix {
        &self.layers[layer]
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Summed (not yet averaged) real-valued delta of one layer.
    pub fn delta(&self, layer: usize) -> Matrix {
        self.layers[layer].to_matrix(self.step())
    }

    /// Add one layer's contribution from a sample's trains.
    pub fn accumulate_layer(
        &mut self,
        layer: usize,
        pre: &SpikeTrain,
        grad_plus: &SpikeTrain,
        grad_minus: &SpikeTrain,
    ) -> Result<()> {
        let t_s = self.opt.t_s as i64;
        let units = &mut self.layers[layer];
        match self.mode {
            UpdateMode::Rpu => rpu_accumulate(units, pre, grad_plus, grad_minus),
            UpdateMode::Rate => {
                check_update_shapes(Some(units), pre, grad_plus, grad_minus)?;
                let (net, pre_counts) = rate_counts(pre, grad_plus, grad_minus);
                add_outer(units, &net, &pre_counts, |u| u);
                Ok(())
            }
            UpdateMode::QuantizedRate { levels } => {
                check_update_shapes(Some(units), pre, grad_plus, grad_minus)?;
                let (net, pre_counts) = rate_counts(pre, grad_plus, grad_minus);
                // Rate units r (step η/T²) become round(r·levels/T²) (step η/levels).
                let levels = levels as i64;
                add_outer(units, &net, &pre_counts, |r| div_round_half_even(r * levels, t_s * t_s));
                Ok(())
            }
        }
    }

    /// Add every layer's contribution of one training sample.
    pub fn accumulate(&mut self, activity: &SampleActivity) -> Result<()> {
        if activity.grad_plus.len() != self.layers.len() {
            return Err(Error::Config("activity has no gradient streams for every layer".into()));
        }
        for l in 0..self.layers.len() {
            self.accumulate_layer(
                l,
                &activity.forward[l],
                &activity.grad_plus[l],
                &activity.grad_minus[l],
            )?;
        }
        self.samples += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &UpdateAccumulator) -> Result<()> {
        if self.mode != other.mode || self.layers.len() != other.layers.len() {
            return Err(Error::Config("cannot merge accumulators of different shape or mode".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.shape() != b.shape() {
                return Err(Error::Config("cannot merge accumulators of different shape".into()));
            }
            a.add_assign(b);
        }
        self.samples += other.samples;
        Ok(())
    }

    pub fn reset(&mut self) {
        self.layers.iter_mut().for_each(UnitMatrix::clear);
        self.samples = 0;
    }
}

/// `W ← W + Σ delta / samples` (or `+ Σ delta` under [`BatchReduction::Sum`]),
/// then reset the accumulator. A partial batch is averaged over the samples
/// it actually holds; an empty one is a no-op.
pub fn batch_apply(net: &mut [CompositeLayer], acc: &mut UpdateAccumulator) -> Result<()> {
    if net.len() != acc.layers.len() {
        return Err(Error::Config("accumulator and network layer counts differ".into()));
    }
    if acc.samples > 0 {
        let scale = match acc.opt.reduction {
            BatchReduction::Mean => acc.step() / acc.samples as f64,
            BatchReduction::Sum => acc.step(),
        };
        for (layer, units) in net.iter_mut().zip(&acc.layers) {
            if layer.weights().shape() != units.shape() {
                return Err(Error::Config("accumulator shape does not match layer".into()));
            }
            layer.add_scaled_units(units.as_slice(), scale);
        }
    }
    acc.reset();
    Ok(())
}
