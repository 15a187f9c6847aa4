//! Composite spiking network: one forward compartment and two gradient
//! compartments (positive and negative streams) per neuron.
//!
//! Forward spikes flow input → output, gradient spikes flow from the label
//! comparison at the output back down to the first hidden layer. Both passes
//! are simulated with the kernel method: potentials are computed in one shot
//! over the whole window and then thresholded with an incrementing threshold.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{role, RngStream};
use crate::spike::{
    kernel_filter_in_place, poisson_encode, threshold_fire, threshold_fire_row, KernelSpec,
    PotentialSeries, SpikeTrain,
};

/// How the hidden-layer gradient gate is derived from forward spikes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GateMode {
    /// Opens at the neuron's first forward spike and stays open.
    #[default]
    Causal,
    /// Open for the whole window iff the neuron spiked at all.
    WholeTrain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelEncoding {
    pub target_rate: f64,
    pub off_rate: f64,
}

impl Default for LabelEncoding {
    fn default() -> Self {
        Self {
            target_rate: 0.5,
            off_rate: 0.0,
        }
    }
}

impl LabelEncoding {
    pub fn rates(&self, label: usize, n_classes: usize) -> Vec<f64> {
        (0..n_classes)
            .map(|c| if c == label { self.target_rate } else { self.off_rate })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub layer_sizes: Vec<usize>,
    pub theta: f64,
    pub tau_x: f64,
    pub tau_delta: f64,
    pub t_s: usize,
    pub wta_enabled: bool,
    /// Uniform off-diagonal inhibitory weight of the output layer.
    pub w_inh: f64,
    pub wta_max_iters: usize,
    /// Dropout probability of each non-output layer's neurons (input first).
    pub dropout_ps: Vec<f64>,
    pub gate_mode: GateMode,
    pub label: LabelEncoding,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.layer_sizes.len() < 2 {
            return err("need at least an input and an output layer".into());
        }
        if self.layer_sizes.contains(&0) {
            return err("layer sizes must be positive".into());
        }
        if self.dropout_ps.len() != self.layer_sizes.len() - 1 {
            return err(format!(
                "dropout_ps needs one entry per non-output layer ({}), got {}",
                self.layer_sizes.len() - 1,
                self.dropout_ps.len()
            ));
        }
        if self.dropout_ps.iter().any(|p| !(0.0..1.0).contains(p)) {
            return err("dropout probabilities must lie in [0, 1)".into());
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return err(format!("theta must be positive, got {}", self.theta));
        }
        KernelSpec::new(self.tau_x)?;
        KernelSpec::new(self.tau_delta)?;
        if self.t_s == 0 {
            return err("t_s must be at least 1".into());
        }
        if !(self.w_inh >= 0.0 && self.w_inh.is_finite()) {
            return err(format!("w_inh must be nonnegative, got {}", self.w_inh));
        }
        if self.wta_max_iters == 0 {
            return err("wta_max_iters must be at least 1".into());
        }
        for r in [self.label.target_rate, self.label.off_rate] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InputDomain(format!("label rate {r} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn kernel_x(&self) -> KernelSpec {
        KernelSpec::new(self.tau_x).expect("validated")
    }

    pub fn kernel_delta(&self) -> KernelSpec {
        KernelSpec::new(self.tau_delta).expect("validated")
    }
}

/// Whether a pass runs with dropout masks (training) or with the `(1 − p)`
/// drive scaling that replaces them at test time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Infer,
}

/// Weights of one layer of composite neurons, `n_out × n_in`.
///
/// A transposed copy is kept alongside so that both the forward pass (which
/// walks columns) and the backward pass (which walks rows) read contiguous
/// memory.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeLayer {
    weights: Matrix,
    weights_t: Matrix,
    /// Dropout probability of this layer's input neurons.
    dropout_p: f64,
}

impl CompositeLayer {
    pub fn new(weights: Matrix, dropout_p: f64) -> Result<Self> {
        if !weights.is_finite() {
            return Err(Error::InputDomain("non-finite weight".into()));
        }
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::Config(format!("dropout_p {dropout_p} outside [0, 1)")));
        }
        let weights_t = weights.transpose();
        Ok(Self {
            weights,
            weights_t,
            dropout_p,
        })
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    pub fn n_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn n_out(&self) -> usize {
        self.weights.rows()
    }

    /// `W += scale · units`, where `units` is row-major `n_out × n_in`.
    pub fn add_scaled_units(&mut self, units: &[i64], scale: f64) {
        assert_eq!(units.len(), self.weights.rows() * self.weights.cols());
        let (rows, cols) = self.weights.shape();
        let w = self.weights.as_mut_slice();
        let wt = self.weights_t.as_mut_slice();
        for r in 0..rows {
            for c in 0..cols {
                let u = units[r * cols + c];
                if u != 0 {
                    let v = w[r * cols + c] + u as f64 * scale;
                    w[r * cols + c] = v;
                    wt[c * rows + r] = v;
                }
            }
        }
    }

    pub fn set_weights(&mut self, weights: Matrix) -> Result<()> {
        *self = CompositeLayer::new(weights, self.dropout_p)?;
        Ok(())
    }
}

/// He initialization: i.i.d. `N(0, 2 / n_in)`, drawn row-major.
pub fn he_init(n_in: usize, n_out: usize, rng: &RngStream) -> Result<Matrix> {
    if n_in == 0 || n_out == 0 {
        return Err(Error::InputDomain("layer sizes must be positive".into()));
    }
    let normal = Normal::new(0.0, (2.0 / n_in as f64).sqrt()).expect("positive std");
    let mut r = rng.rng();
    let data = (0..n_in * n_out).map(|_| normal.sample(&mut r)).collect();
    Ok(Matrix::from_vec(n_out, n_in, data))
}

/// Fresh He-initialized network; layer `l` uses stream `sub(l)` of `rng`.
pub fn init_network(cfg: &NetworkConfig, rng: &RngStream) -> Result<Vec<CompositeLayer>> {
    cfg.validate()?;
    cfg.layer_sizes
        .windows(2)
        .enumerate()
        .map(|(l, w)| {
            let weights = he_init(w[0], w[1], &rng.sub_path(&[role::WEIGHTS, l as u64]))?;
            CompositeLayer::new(weights, cfg.dropout_ps[l])
        })
        .collect()
}

/// Potential driven through a weight table: for every event `(i, t)` in
/// `plus` the row `table[i]` is added to the currents at tick `t` (and
/// subtracted for `minus`), then each neuron's currents are filtered by the
/// kernel. By linearity this equals `W · (ε * s)`.
fn kernel_drive(
    table: &Matrix,
    plus: &SpikeTrain,
    minus: Option<&SpikeTrain>,
    kernel: KernelSpec,
    scale: f64,
) -> PotentialSeries {
    let n_out = table.cols();
    let t_s = plus.t_s();
    let mut currents = vec![0.0; t_s * n_out];
    let mut add_events = |train: &SpikeTrain, sign: f64| {
        for (t, events) in train.events_by_time().iter().enumerate() {
            let slot = &mut currents[t * n_out..(t + 1) * n_out];
            for &i in events {
                let w = table.row(i as usize);
                if sign > 0.0 {
                    slot.iter_mut().zip(w).for_each(|(c, w)| *c += w);
                } else {
                    slot.iter_mut().zip(w).for_each(|(c, w)| *c -= w);
                }
            }
        }
    };
    add_events(plus, 1.0);
    if let Some(m) = minus {
        add_events(m, -1.0);
    }
    let mut out = PotentialSeries::zeros(n_out, t_s);
    for j in 0..n_out {
        let row = out.row_mut(j);
        for (t, v) in row.iter_mut().enumerate() {
            *v = currents[t * n_out + j] * scale;
        }
        kernel_filter_in_place(row, kernel);
    }
    out
}

fn check_input(layer: &CompositeLayer, input: &SpikeTrain, cfg: &NetworkConfig) -> Result<()> {
    if input.n_neurons() != layer.n_in() {
        return Err(Error::Config(format!(
            "layer expects {} inputs, got {}",
            layer.n_in(),
            input.n_neurons()
        )));
    }
    if input.t_s() != cfg.t_s {
        return Err(Error::Config(format!(
            "train has {} ticks, config says {}",
            input.t_s(),
            cfg.t_s
        )));
    }
    Ok(())
}

fn drive_scale(layer: &CompositeLayer, phase: Phase) -> f64 {
    match phase {
        Phase::Train => 1.0,
        Phase::Infer => 1.0 - layer.dropout_p,
    }
}

/// Feedforward membrane potential `W · (ε_x * input)` of a layer.
pub fn forward_potential(
    layer: &CompositeLayer,
    input: &SpikeTrain,
    cfg: &NetworkConfig,
    phase: Phase,
) -> Result<PotentialSeries> {
    check_input(layer, input, cfg)?;
    Ok(kernel_drive(
        &layer.weights_t,
        input,
        None,
        cfg.kernel_x(),
        drive_scale(layer, phase),
    ))
}

pub fn forward_hidden(
    layer: &CompositeLayer,
    input: &SpikeTrain,
    cfg: &NetworkConfig,
    phase: Phase,
) -> Result<SpikeTrain> {
    threshold_fire(&forward_potential(layer, input, cfg, phase)?, cfg.theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WtaDiagnostics {
    pub iterations: usize,
    pub converged: bool,
}

/// One application of the lateral-inhibition map: fire on
/// `feedforward − W_inh · (ε_x * current)` with a zero-diagonal `W_inh`.
pub fn wta_step(
    feedforward: &PotentialSeries,
    current: &SpikeTrain,
    cfg: &NetworkConfig,
) -> SpikeTrain {
    let n = feedforward.n_neurons();
    let t_s = feedforward.t_s();
    let kernel = cfg.kernel_x();
    // Per-neuron kernel response of the previous iterate and their sum.
    let mut responses = PotentialSeries::zeros(n, t_s);
    let mut total = vec![0.0; t_s];
    for j in 0..n {
        if current.count(j) == 0 {
            continue;
        }
        let row = responses.row_mut(j);
        for (v, &s) in row.iter_mut().zip(current.row(j)) {
            *v = s as f64;
        }
        kernel_filter_in_place(row, kernel);
        total.iter_mut().zip(row.iter()).for_each(|(a, b)| *a += b);
    }
    let mut next = SpikeTrain::zeros(n, t_s);
    let mut p = vec![0.0; t_s];
    for j in 0..n {
        for t in 0..t_s {
            let others = total[t] - responses.get(j, t);
            p[t] = feedforward.get(j, t) - cfg.w_inh * others;
        }
        threshold_fire_row(&p, cfg.theta, next.row_mut(j));
    }
    next
}

/// Output layer: plain thresholding, or the iterated winner-take-all map
/// when `cfg.wta_enabled`. Non-convergence returns the last iterate.
pub fn forward_output(
    layer: &CompositeLayer,
    input: &SpikeTrain,
    cfg: &NetworkConfig,
    phase: Phase,
) -> Result<(SpikeTrain, WtaDiagnostics)> {
    let feedforward = forward_potential(layer, input, cfg, phase)?;
    let s0 = threshold_fire(&feedforward, cfg.theta)?;
    if !cfg.wta_enabled {
        return Ok((
            s0,
            WtaDiagnostics {
                iterations: 0,
                converged: true,
            },
        ));
    }
    Ok(wta_iterate(&feedforward, s0, cfg))
}

/// Run the winner-take-all iteration from `s0`.
pub fn wta_iterate(
    feedforward: &PotentialSeries,
    s0: SpikeTrain,
    cfg: &NetworkConfig,
) -> (SpikeTrain, WtaDiagnostics) {
    let mut current = s0;
    for k in 1..=cfg.wta_max_iters {
        let next = wta_step(feedforward, &current, cfg);
        if next == current {
            return (
                current,
                WtaDiagnostics {
                    iterations: k,
                    converged: true,
                },
            );
        }
        current = next;
    }
    (
        current,
        WtaDiagnostics {
            iterations: cfg.wta_max_iters,
            converged: false,
        },
    )
}

/// Class with the most output spikes; ties go to the lowest index.
pub fn infer(output: &SpikeTrain) -> usize {
    argmax_lowest(&output.counts())
}

pub(crate) fn argmax_lowest(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Split-sign output gradient: `f_θ(ε_δ*label − ε_δ*out)` and its mirror.
pub fn backward_output(
    output: &SpikeTrain,
    label: &SpikeTrain,
    cfg: &NetworkConfig,
) -> Result<(SpikeTrain, SpikeTrain)> {
    output.check_same_shape(label)?;
    let kernel = cfg.kernel_delta();
    let mut diff = PotentialSeries::zeros(output.n_neurons(), output.t_s());
    for j in 0..output.n_neurons() {
        let row = diff.row_mut(j);
        for ((v, &l), &o) in row.iter_mut().zip(label.row(j)).zip(output.row(j)) {
            *v = l as f64 - o as f64;
        }
        kernel_filter_in_place(row, kernel);
    }
    Ok((
        threshold_fire(&diff, cfg.theta)?,
        threshold_fire(&diff.negated(), cfg.theta)?,
    ))
}

/// Gradient gate of a hidden layer from its forward spikes.
pub fn compute_gate(forward: &SpikeTrain, mode: GateMode) -> SpikeTrain {
    let mut gate = SpikeTrain::zeros(forward.n_neurons(), forward.t_s());
    for i in 0..forward.n_neurons() {
        let src = forward.row(i);
        let dst = gate.row_mut(i);
        match mode {
            GateMode::Causal => {
                let mut open = 0u8;
                for (g, &s) in dst.iter_mut().zip(src) {
                    open |= s;
                    *g = open;
                }
            }
            GateMode::WholeTrain => {
                if src.iter().any(|&s| s != 0) {
                    dst.fill(1);
                }
            }
        }
    }
    gate
}

/// Split-sign hidden gradient: the gate is applied after thresholding.
pub fn backward_hidden(
    weights_above: &Matrix,
    grad_plus_above: &SpikeTrain,
    grad_minus_above: &SpikeTrain,
    gate: &SpikeTrain,
    cfg: &NetworkConfig,
) -> Result<(SpikeTrain, SpikeTrain)> {
    grad_plus_above.check_same_shape(grad_minus_above)?;
    if grad_plus_above.n_neurons() != weights_above.rows()
        || gate.n_neurons() != weights_above.cols()
        || gate.t_s() != grad_plus_above.t_s()
    {
        return Err(Error::Config(format!(
            "backward shapes: weights {}x{}, upstream {}, gate {}",
            weights_above.rows(),
            weights_above.cols(),
            grad_plus_above.n_neurons(),
            gate.n_neurons()
        )));
    }
    let potential = kernel_drive(
        weights_above,
        grad_plus_above,
        Some(grad_minus_above),
        cfg.kernel_delta(),
        1.0,
    );
    let plus = threshold_fire(&potential, cfg.theta)?.and(gate)?;
    let minus = threshold_fire(&potential.negated(), cfg.theta)?.and(gate)?;
    Ok((plus, minus))
}

/// Keep-masks for every non-output layer, fixed for the whole sample window.
pub fn sample_dropout_masks(cfg: &NetworkConfig, rng: &RngStream) -> Vec<Vec<bool>> {
    use rand::Rng;
    let mut r = rng.rng();
    cfg.dropout_ps
        .iter()
        .zip(&cfg.layer_sizes)
        .map(|(&p, &n)| {
            if p == 0.0 {
                vec![true; n]
            } else {
                (0..n).map(|_| r.random::<f64>() >= p).collect()
            }
        })
        .collect()
}

fn apply_mask(train: &mut SpikeTrain, mask: &[bool]) {
    for (i, &keep) in mask.iter().enumerate() {
        if !keep {
            train.clear_row(i);
        }
    }
}

/// Every spike train produced while presenting one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleActivity {
    /// Forward trains, input layer first.
    pub forward: Vec<SpikeTrain>,
    /// Positive gradient streams of layers `1..=L`; empty at inference.
    pub grad_plus: Vec<SpikeTrain>,
    pub grad_minus: Vec<SpikeTrain>,
    /// Gates of the hidden layers `1..L`; empty at inference.
    pub gates: Vec<SpikeTrain>,
    /// Keep-masks of the non-output layers (all true at inference).
    pub dropout_masks: Vec<Vec<bool>>,
    pub label_spikes: Option<SpikeTrain>,
    pub wta: WtaDiagnostics,
}

impl SampleActivity {
    pub fn output(&self) -> &SpikeTrain {
        self.forward.last().expect("at least two layers")
    }

    pub fn predicted_class(&self) -> usize {
        infer(self.output())
    }

    /// Forward spike count of each layer, input first.
    pub fn spikes_per_layer(&self) -> Vec<u64> {
        self.forward.iter().map(SpikeTrain::total).collect()
    }
}

/// Present one sample. Dropout masks are drawn from `rng` when training.
pub fn run_sample(
    net: &[CompositeLayer],
    input_rates: &[f64],
    label: Option<usize>,
    cfg: &NetworkConfig,
    rng: &RngStream,
    phase: Phase,
) -> Result<SampleActivity> {
    let masks = match phase {
        Phase::Train => Some(sample_dropout_masks(cfg, &rng.sub(role::DROPOUT))),
        Phase::Infer => None,
    };
    run_sample_with_masks(net, input_rates, label, cfg, rng, phase, masks)
}

/// As [`run_sample`], with caller-supplied keep-masks (ignored at inference).
pub fn run_sample_with_masks(
    net: &[CompositeLayer],
    input_rates: &[f64],
    label: Option<usize>,
    cfg: &NetworkConfig,
    rng: &RngStream,
    phase: Phase,
    masks: Option<Vec<Vec<bool>>>,
) -> Result<SampleActivity> {
    if net.len() + 1 != cfg.layer_sizes.len() {
        return Err(Error::Config(format!(
            "network has {} weight layers, config implies {}",
            net.len(),
            cfg.layer_sizes.len() - 1
        )));
    }
    let training = phase == Phase::Train;
    let n_classes = cfg.n_classes();
    let label = match (training, label) {
        (true, None) => {
            return Err(Error::InputDomain("training requires a label".into()));
        }
        (true, Some(c)) if c >= n_classes => {
            return Err(Error::InputDomain(format!(
                "label {c} out of range for {n_classes} classes"
            )));
        }
        (true, l) => l,
        (false, _) => None,
    };
    let masks = match (training, masks) {
        (true, Some(m)) => {
            if m.len() != net.len() || m.iter().zip(net).any(|(m, l)| m.len() != l.n_in()) {
                return Err(Error::Config("dropout mask shapes do not match network".into()));
            }
            m
        }
        _ => net.iter().map(|l| vec![true; l.n_in()]).collect(),
    };

    let mut input = poisson_encode(input_rates, cfg.t_s, &rng.sub(role::INPUT))?;
    apply_mask(&mut input, &masks[0]);
    let mut forward = vec![input];
    for (l, layer) in net[..net.len() - 1].iter().enumerate() {
        let mut s = forward_hidden(layer, &forward[l], cfg, phase)?;
        apply_mask(&mut s, &masks[l + 1]);
        forward.push(s);
    }
    let (output, wta) = forward_output(net.last().expect("nonempty"), &forward[net.len() - 1], cfg, phase)?;
    forward.push(output);

    let mut activity = SampleActivity {
        forward,
        grad_plus: Vec::new(),
        grad_minus: Vec::new(),
        gates: Vec::new(),
        dropout_masks: masks,
        label_spikes: None,
        wta,
    };
    let Some(label) = label else {
        return Ok(activity);
    };

    let label_spikes = poisson_encode(
        &cfg.label.rates(label, n_classes),
        cfg.t_s,
        &rng.sub(role::LABEL),
    )?;
    let n_layers = net.len();
    let mut plus = vec![SpikeTrain::zeros(0, 0); n_layers];
    let mut minus = vec![SpikeTrain::zeros(0, 0); n_layers];
    let mut gates = vec![SpikeTrain::zeros(0, 0); n_layers - 1];
    let (gp, gm) = backward_output(activity.output(), &label_spikes, cfg)?;
    plus[n_layers - 1] = gp;
    minus[n_layers - 1] = gm;
    // Hidden layer h (1-based among forward trains) sits below weight layer h.
    for h in (1..n_layers).rev() {
        let gate = compute_gate(&activity.forward[h], cfg.gate_mode);
        let (gp, gm) = backward_hidden(net[h].weights(), &plus[h], &minus[h], &gate, cfg)?;
        plus[h - 1] = gp;
        minus[h - 1] = gm;
        gates[h - 1] = gate;
    }
    activity.grad_plus = plus;
    activity.grad_minus = minus;
    activity.gates = gates;
    activity.label_spikes = Some(label_spikes);
    Ok(activity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spike::{convolve, kernel_value};
    use proptest::prelude::*;

    fn cfg(sizes: &[usize], t_s: usize) -> NetworkConfig {
        NetworkConfig {
            layer_sizes: sizes.to_vec(),
            theta: 5.0,
            tau_x: 5.0,
            tau_delta: 0.5,
            t_s,
            wta_enabled: false,
            w_inh: 1.0,
            wta_max_iters: 10,
            dropout_ps: vec![0.0; sizes.len() - 1],
            gate_mode: GateMode::Causal,
            label: LabelEncoding::default(),
        }
    }

    fn layer(rows: &[Vec<f64>]) -> CompositeLayer {
        CompositeLayer::new(Matrix::from_rows(rows), 0.0).unwrap()
    }

    fn times(s: &SpikeTrain, i: usize) -> Vec<usize> {
        (0..s.t_s()).filter(|&t| s.get(i, t)).collect()
    }

    fn random_train(n: usize, t_s: usize, rate: f64, seed: u64) -> SpikeTrain {
        poisson_encode(&vec![rate; n], t_s, &RngStream::new(seed, 0)).unwrap()
    }

    #[test]
    fn he_init_target_std() {
        assert_eq!((2.0f64 / 2.0).sqrt(), 1.0);
        assert!(((2.0f64 / 800.0).sqrt() - 0.05).abs() < 1e-12);
        let w = he_init(2, 3, &RngStream::new(1, 1)).unwrap();
        assert_eq!(w.shape(), (3, 2));
        assert!(he_init(0, 3, &RngStream::new(1, 1)).is_err());
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let c = cfg(&[3, 2], 20);
        let l = layer(&[vec![1.0, 2.0, 3.0], vec![0.5, 0.5, 0.5]]);
        let out = forward_hidden(&l, &SpikeTrain::zeros(3, 20), &c, Phase::Train).unwrap();
        assert!(out.is_silent());
    }

    #[test]
    fn single_connection_matches_spike_core_oracle() {
        let c = cfg(&[1, 1], 30);
        let input = SpikeTrain::from_rows(&[vec![1; 30]]).unwrap();
        let out = forward_hidden(&layer(&[vec![1.0]]), &input, &c, Phase::Train).unwrap();
        let k = KernelSpec::new(5.0).unwrap();
        let p: Vec<f64> = (0..30)
            .map(|t| (0..=t).map(|tp| kernel_value(k, (t - tp) as i64)).sum())
            .collect();
        let expected = threshold_fire(&PotentialSeries::from_rows(&[p]), 5.0).unwrap();
        assert_eq!(out, expected);
        // Frozen from an independent float evaluation of the same sum.
        assert_eq!(times(&out, 0), vec![9, 15, 20, 25]);
    }

    #[test]
    fn negative_weight_never_fires() {
        let c = cfg(&[2, 1], 40);
        let out = forward_hidden(
            &layer(&[vec![-0.5, -2.0]]),
            &random_train(2, 40, 0.7, 3),
            &c,
            Phase::Train,
        )
        .unwrap();
        assert!(out.is_silent());
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let c = cfg(&[2, 1], 10);
        let e = forward_hidden(&layer(&[vec![1.0, 1.0]]), &SpikeTrain::zeros(3, 10), &c, Phase::Train);
        assert!(matches!(e, Err(Error::Config(_))));
    }

    #[test]
    fn event_drive_matches_literal_weighted_convolution() {
        let c = cfg(&[6, 4], 50);
        let w = he_init(6, 4, &RngStream::new(5, 0)).unwrap();
        let input = random_train(6, 50, 0.4, 11);
        let l = CompositeLayer::new(w.clone(), 0.0).unwrap();
        let fast = forward_potential(&l, &input, &c, Phase::Train).unwrap();
        let conv = convolve(&input, c.kernel_x());
        for j in 0..4 {
            for t in 0..50 {
                let direct: f64 = (0..6).map(|i| w.get(j, i) * conv.get(i, t)).sum();
                assert!((fast.get(j, t) - direct).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn inference_scales_drive_by_keep_probability() {
        let c = cfg(&[2, 1], 20);
        let input = random_train(2, 20, 0.5, 2);
        let l0 = CompositeLayer::new(Matrix::from_rows(&[vec![1.0, 0.5]]), 0.0).unwrap();
        let l3 = CompositeLayer::new(Matrix::from_rows(&[vec![1.0, 0.5]]), 0.3).unwrap();
        let p0 = forward_potential(&l0, &input, &c, Phase::Infer).unwrap();
        let p3 = forward_potential(&l3, &input, &c, Phase::Infer).unwrap();
        let p3_train = forward_potential(&l3, &input, &c, Phase::Train).unwrap();
        for t in 0..20 {
            assert!((p3.get(0, t) - 0.7 * p0.get(0, t)).abs() < 1e-12);
            assert_eq!(p3_train.get(0, t), p0.get(0, t));
        }
    }

    #[test]
    fn wta_zero_inhibition_is_immediate_fixed_point() {
        let mut c = cfg(&[5, 3], 40);
        c.wta_enabled = true;
        c.w_inh = 0.0;
        let l = CompositeLayer::new(he_init(5, 3, &RngStream::new(2, 2)).unwrap().scale(6.0), 0.0).unwrap();
        let input = random_train(5, 40, 0.6, 4);
        let (wta, diag) = forward_output(&l, &input, &c, Phase::Train).unwrap();
        let plain = forward_hidden(&l, &input, &c, Phase::Train).unwrap();
        assert_eq!(wta, plain);
        assert!(diag.converged);
        assert_eq!(diag.iterations, 1);
    }

    #[test]
    fn wta_single_output_equals_hidden() {
        let mut c = cfg(&[3, 1], 30);
        c.wta_enabled = true;
        c.w_inh = 5.0;
        let l = layer(&[vec![2.0, 1.0, 3.0]]);
        let input = random_train(3, 30, 0.5, 8);
        let (wta, _) = forward_output(&l, &input, &c, Phase::Train).unwrap();
        assert_eq!(wta, forward_hidden(&l, &input, &c, Phase::Train).unwrap());
    }

    #[test]
    fn wta_suppresses_weak_neuron() {
        let mut c = cfg(&[1, 2], 100);
        c.wta_enabled = true;
        let l = layer(&[vec![4.0], vec![1.5]]);
        let input = SpikeTrain::from_rows(&[vec![1; 100]]).unwrap();
        c.w_inh = 0.0;
        let (free, _) = forward_output(&l, &input, &c, Phase::Train).unwrap();
        c.w_inh = 3.0;
        let (inhibited, diag) = forward_output(&l, &input, &c, Phase::Train).unwrap();
        assert!(free.count(1) > 0);
        assert!(inhibited.count(1) < free.count(1));
        assert!(inhibited.count(0) <= free.count(0));
        if diag.converged {
            let feedforward = forward_potential(&l, &input, &c, Phase::Train).unwrap();
            assert_eq!(wta_step(&feedforward, &inhibited, &c), inhibited);
        }
    }

    #[test]
    fn infer_argmax_and_ties() {
        let mk = |counts: &[usize]| {
            let rows: Vec<Vec<u8>> = counts
                .iter()
                .map(|&c| (0..10).map(|t| (t < c) as u8).collect())
                .collect();
            SpikeTrain::from_rows(&rows).unwrap()
        };
        assert_eq!(infer(&mk(&[3, 7, 2])), 1);
        assert_eq!(infer(&mk(&[0, 0, 0])), 0);
        assert_eq!(infer(&mk(&[5, 5, 1])), 0);
    }

    #[test]
    fn backward_output_identical_trains_cancel() {
        let c = cfg(&[2, 3], 50);
        let s = random_train(3, 50, 0.5, 1);
        let (gp, gm) = backward_output(&s, &s, &c).unwrap();
        assert!(gp.is_silent() && gm.is_silent());
    }

    #[test]
    fn backward_output_silent_output_label_only() {
        let c = cfg(&[2, 1], 50);
        let label = random_train(1, 50, 0.5, 6);
        let (gp, gm) = backward_output(&SpikeTrain::zeros(1, 50), &label, &c).unwrap();
        assert!(gm.is_silent());
        let p = convolve(&label, c.kernel_delta());
        let reaches = (0..50).any(|t| p.get(0, t) >= 5.0);
        assert_eq!(!gp.is_silent(), reaches);
        assert!(label.count(0) >= 5 || gp.is_silent());
    }

    #[test]
    fn backward_output_swap_antisymmetry() {
        let c = cfg(&[2, 4], 60);
        let a = random_train(4, 60, 0.3, 1);
        let b = random_train(4, 60, 0.6, 2);
        let (p1, m1) = backward_output(&a, &b, &c).unwrap();
        let (p2, m2) = backward_output(&b, &a, &c).unwrap();
        assert_eq!(p1, m2);
        assert_eq!(m1, p2);
    }

    #[test]
    fn gate_annihilates_and_cancellation() {
        let c = cfg(&[2, 2, 1], 40);
        let w = Matrix::from_rows(&[vec![1.0, 1.0]]);
        let up = SpikeTrain::from_rows(&[vec![1; 40]]).unwrap();
        let empty = SpikeTrain::zeros(1, 40);
        let closed = SpikeTrain::zeros(2, 40);
        let (gp, gm) = backward_hidden(&w, &up, &empty, &closed, &c).unwrap();
        assert!(gp.is_silent() && gm.is_silent());
        let open = SpikeTrain::from_rows(&[vec![1; 40], vec![1; 40]]).unwrap();
        let (gp, gm) = backward_hidden(&w, &up, &up, &open, &c).unwrap();
        assert!(gp.is_silent() && gm.is_silent());
    }

    #[test]
    fn backward_hidden_single_connection() {
        let c = cfg(&[1, 1, 1], 30);
        let w = Matrix::from_rows(&[vec![1.0]]);
        let up = SpikeTrain::from_rows(&[vec![1; 30]]).unwrap();
        let gate = SpikeTrain::from_rows(&[vec![1; 30]]).unwrap();
        let (gp, gm) = backward_hidden(&w, &up, &SpikeTrain::zeros(1, 30), &gate, &c).unwrap();
        let expected = threshold_fire(&convolve(&up, c.kernel_delta()), 5.0).unwrap();
        assert_eq!(gp, expected);
        assert_eq!(times(&gp, 0), vec![6, 11, 16, 21, 26]);
        assert!(gm.is_silent());
    }

    #[test]
    fn causal_and_whole_train_gates() {
        let f = SpikeTrain::from_rows(&[vec![0, 0, 1, 0, 1], vec![0; 5]]).unwrap();
        let causal = compute_gate(&f, GateMode::Causal);
        assert_eq!(causal.row(0), &[0, 0, 1, 1, 1]);
        assert_eq!(causal.row(1), &[0; 5]);
        let whole = compute_gate(&f, GateMode::WholeTrain);
        assert_eq!(whole.row(0), &[1; 5]);
    }

    #[test]
    fn dropout_mask_statistics() {
        let mut c = cfg(&[1280, 10], 1);
        c.dropout_ps = vec![0.0];
        assert!(sample_dropout_masks(&c, &RngStream::new(1, 1))[0].iter().all(|&k| k));
        // Binomial(1280, 0.7): mean 896, 3σ ≈ 49.
        c.dropout_ps = vec![0.3];
        let seeds = 200u64;
        let inside = (0..seeds)
            .filter(|&s| {
                let kept = sample_dropout_masks(&c, &RngStream::new(s, 9))[0]
                    .iter()
                    .filter(|&&k| k)
                    .count() as i64;
                (kept - 896).abs() <= 49
            })
            .count();
        assert!(inside * 100 >= seeds as usize * 99, "{inside}");
    }

    fn small_net(c: &NetworkConfig, seed: u64, gain: f64) -> Vec<CompositeLayer> {
        init_network(c, &RngStream::new(seed, 0))
            .unwrap()
            .into_iter()
            .map(|l| CompositeLayer::new(l.weights().scale(gain), l.dropout_p()).unwrap())
            .collect()
    }

    #[test]
    fn zero_input_propagates_zero() {
        let c = cfg(&[8, 6, 3], 40);
        let net = small_net(&c, 3, 3.0);
        let a = run_sample(&net, &[0.0; 8], Some(1), &c, &RngStream::new(1, 1), Phase::Train).unwrap();
        assert!(a.forward.iter().all(SpikeTrain::is_silent));
        assert!(a.gates.iter().all(SpikeTrain::is_silent));
        assert!(a.grad_plus[0].is_silent() && a.grad_minus[0].is_silent());
    }

    #[test]
    fn inference_mode_skips_backward() {
        let c = cfg(&[8, 6, 3], 40);
        let net = small_net(&c, 3, 3.0);
        let a = run_sample(&net, &[0.5; 8], None, &c, &RngStream::new(1, 1), Phase::Infer).unwrap();
        assert!(a.grad_plus.is_empty() && a.grad_minus.is_empty() && a.gates.is_empty());
        assert!(a.label_spikes.is_none());
    }

    #[test]
    fn run_sample_label_errors() {
        let c = cfg(&[4, 3, 2], 10);
        let net = small_net(&c, 1, 1.0);
        let r = RngStream::new(1, 1);
        assert!(matches!(
            run_sample(&net, &[0.5; 4], Some(2), &c, &r, Phase::Train),
            Err(Error::InputDomain(_))
        ));
        assert!(run_sample(&net, &[0.5; 4], None, &c, &r, Phase::Train).is_err());
        assert!(run_sample(&net, &[1.5; 4], Some(0), &c, &r, Phase::Train).is_err());
    }

    #[test]
    fn run_sample_deterministic() {
        let mut c = cfg(&[10, 8, 4], 60);
        c.wta_enabled = true;
        c.dropout_ps = vec![0.2, 0.3];
        let net = small_net(&c, 7, 4.0);
        let rates: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let r = RngStream::new(42, 17);
        let a = run_sample(&net, &rates, Some(2), &c, &r, Phase::Train).unwrap();
        let b = run_sample(&net, &rates, Some(2), &c, &r, Phase::Train).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dropped_neurons_are_silent_everywhere() {
        let mut c = cfg(&[10, 12, 4], 80);
        c.dropout_ps = vec![0.5, 0.5];
        let net = small_net(&c, 2, 5.0);
        let rates = vec![0.8; 10];
        for seed in 0..10 {
            let a = run_sample(&net, &rates, Some(1), &c, &RngStream::new(seed, 3), Phase::Train).unwrap();
            for (l, mask) in a.dropout_masks.iter().enumerate() {
                for (i, &keep) in mask.iter().enumerate() {
                    if !keep {
                        assert_eq!(a.forward[l].count(i), 0);
                        if l > 0 {
                            assert_eq!(a.grad_plus[l - 1].count(i), 0);
                            assert_eq!(a.grad_minus[l - 1].count(i), 0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rate_matches_relu_slope() {
        // Constant slope m: potential m·(t+1) crosses θ every θ/m ticks.
        let t_s = 2000;
        for &m in &[0.0, 0.3, 1.7, 4.2, -1.0] {
            let p: Vec<f64> = (0..t_s).map(|t| m * (t + 1) as f64).collect();
            let s = threshold_fire(&PotentialSeries::from_rows(&[p]), 5.0).unwrap();
            let expected = (m.max(0.0) / 5.0) * t_s as f64;
            assert!((s.count(0) as f64 - expected).abs() <= 1.0, "m={m}");
        }
    }

    proptest! {
        #[test]
        fn gate_is_prefix_or(bits in proptest::collection::vec(any::<bool>(), 1..80)) {
            let row: Vec<u8> = bits.iter().map(|&b| b as u8).collect();
            let f = SpikeTrain::from_rows(std::slice::from_ref(&row)).unwrap();
            let g = compute_gate(&f, GateMode::Causal);
            for t in 0..row.len() {
                let expected = row[..=t].contains(&1);
                prop_assert_eq!(g.get(0, t), expected);
                if t > 0 {
                    prop_assert!(g.get(0, t) >= g.get(0, t - 1));
                }
            }
        }

        #[test]
        fn nonnegative_upstream_gives_no_minus_stream(
            seed in 0u64..1000,
            n_above in 1usize..5,
            n_this in 1usize..5,
        ) {
            let c = cfg(&[1, n_this, n_above], 40);
            let w = Matrix::from_vec(
                n_above,
                n_this,
                he_init(n_this, n_above, &RngStream::new(seed, 1)).unwrap().as_slice().iter().map(|v| v.abs() * 3.0).collect(),
            );
            let up = random_train(n_above, 40, 0.6, seed);
            let gate = SpikeTrain::from_rows(&vec![vec![1; 40]; n_this]).unwrap();
            let (_, gm) = backward_hidden(&w, &up, &SpikeTrain::zeros(n_above, 40), &gate, &c).unwrap();
            prop_assert!(gm.is_silent());
        }

        #[test]
        fn converged_wta_is_fixed_point(seed in 0u64..500, w_inh in 0.0f64..3.0) {
            let mut c = cfg(&[6, 4], 50);
            c.wta_enabled = true;
            c.w_inh = w_inh;
            let l = CompositeLayer::new(he_init(6, 4, &RngStream::new(seed, 5)).unwrap().scale(5.0), 0.0).unwrap();
            let input = random_train(6, 50, 0.5, seed);
            let (s, diag) = forward_output(&l, &input, &c, Phase::Train).unwrap();
            if diag.converged {
                let ff = forward_potential(&l, &input, &c, Phase::Train).unwrap();
                prop_assert_eq!(wta_step(&ff, &s, &c), s);
            }
        }
    }
}
