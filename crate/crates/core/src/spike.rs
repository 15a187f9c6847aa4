//! Spike trains, the saturating-exponential response kernel, and the
//! incrementing-threshold firing function.
//!
//! Time is discrete: a train holds `t_s` ticks and the kernel time constant
//! is measured in ticks.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Binary activity matrix, `n_neurons × t_s`, stored neuron-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpikeTrain {
    n_neurons: usize,
    t_s: usize,
    data: Vec<u8>,
}

impl SpikeTrain {
    pub fn zeros(n_neurons: usize, t_s: usize) -> Self {
        Self {
            n_neurons,
            t_s,
            data: vec![0; n_neurons * t_s],
        }
    }

    /// Build from per-neuron rows of 0/1 values.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let t_s = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != t_s) {
            return Err(Error::Config("spike rows differ in length".into()));
        }
        if rows.iter().flatten().any(|&v| v > 1) {
            return Err(Error::InputDomain("spike entries must be 0 or 1".into()));
        }
        Ok(Self {
            n_neurons: rows.len(),
            t_s,
            data: rows.concat(),
        })
    }

    /// Single-neuron train with spikes at the given ticks.
    pub fn from_spike_times(t_s: usize, times: &[usize]) -> Self {
        let mut s = Self::zeros(1, t_s);
        for &t in times {
            s.set(0, t, true);
        }
        s
    }

    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    pub fn t_s(&self) -> usize {
        self.t_s
    }

    #[inline]
    pub fn get(&self, i: usize, t: usize) -> bool {
        self.data[i * self.t_s + t] != 0
    }

    #[inline]
    pub fn set(&mut self, i: usize, t: usize, spike: bool) {
        self.data[i * self.t_s + t] = spike as u8;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.t_s..(i + 1) * self.t_s]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [u8] {
        &mut self.data[i * self.t_s..(i + 1) * self.t_s]
    }

    pub fn clear_row(&mut self, i: usize) {
        self.row_mut(i).fill(0);
    }

    pub fn count(&self, i: usize) -> u32 {
        self.row(i).iter().map(|&v| v as u32).sum()
    }

    pub fn counts(&self) -> Vec<u32> {
        (0..self.n_neurons).map(|i| self.count(i)).collect()
    }

    pub fn total(&self) -> u64 {
        self.data.iter().map(|&v| v as u64).sum()
    }

    pub fn is_silent(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// For each tick, the indices of neurons that spike at that tick.
    pub fn events_by_time(&self) -> Vec<Vec<u32>> {
        let mut events = vec![Vec::new(); self.t_s];
        for i in 0..self.n_neurons {
            for (t, &v) in self.row(i).iter().enumerate() {
                if v != 0 {
                    events[t].push(i as u32);
                }
            }
        }
        events
    }

    /// Elementwise AND with a binary matrix of the same shape.
    pub fn and(&self, other: &SpikeTrain) -> Result<SpikeTrain> {
        self.check_same_shape(other)?;
        Ok(SpikeTrain {
            n_neurons: self.n_neurons,
            t_s: self.t_s,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a & b).collect(),
        })
    }

    pub fn check_same_shape(&self, other: &SpikeTrain) -> Result<()> {
        if self.n_neurons != other.n_neurons || self.t_s != other.t_s {
            return Err(Error::Config(format!(
                "spike train shape {}x{} does not match {}x{}",
                self.n_neurons, self.t_s, other.n_neurons, other.t_s
            )));
        }
        Ok(())
    }
}

/// `ε(t) = H(t)·(1 − e^{−t/τ})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    tau: f64,
}

impl KernelSpec {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("kernel tau must be positive, got {tau}")));
        }
        Ok(Self { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Per-tick decay factor of the unsaturated part, `e^{−1/τ}`.
    pub fn decay(&self) -> f64 {
        (-1.0 / self.tau).exp()
    }
}

pub fn kernel_value(kernel: KernelSpec, lag: i64) -> f64 {
    if lag < 0 {
        0.0
    } else {
        1.0 - (-(lag as f64) / kernel.tau).exp()
    }
}

/// Real-valued `n_neurons × t_s` series of membrane potentials.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSeries {
    n_neurons: usize,
    t_s: usize,
    data: Vec<f64>,
}

impl PotentialSeries {
    pub fn zeros(n_neurons: usize, t_s: usize) -> Self {
        Self {
            n_neurons,
            t_s,
            data: vec![0.0; n_neurons * t_s],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let t_s = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == t_s), "ragged potential rows");
        Self {
            n_neurons: rows.len(),
            t_s,
            data: rows.concat(),
        }
    }

    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    pub fn t_s(&self) -> usize {
        self.t_s
    }

    #[inline]
    pub fn get(&self, i: usize, t: usize) -> f64 {
        self.data[i * self.t_s + t]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.t_s..(i + 1) * self.t_s]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.t_s..(i + 1) * self.t_s]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn negated(&self) -> PotentialSeries {
        PotentialSeries {
            n_neurons: self.n_neurons,
            t_s: self.t_s,
            data: self.data.iter().map(|v| -v).collect(),
        }
    }

    /// `self − other`
    pub fn minus(&self, other: &PotentialSeries) -> PotentialSeries {
        assert_eq!((self.n_neurons, self.t_s), (other.n_neurons, other.t_s));
        PotentialSeries {
            n_neurons: self.n_neurons,
            t_s: self.t_s,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Bernoulli-per-tick encoding: entry `(i, t)` is 1 with probability `rates[i]`.
pub fn poisson_encode(rates: &[f64], t_s: usize, rng: &RngStream) -> Result<SpikeTrain> {
    if t_s == 0 {
        return Err(Error::InputDomain("t_s must be at least 1".into()));
    }
    if let Some((i, r)) = rates
        .iter()
        .enumerate()
        .find(|(_, r)| !(0.0..=1.0).contains(*r))
    {
        return Err(Error::InputDomain(format!("rate {r} at index {i} outside [0, 1]")));
    }
    let mut train = SpikeTrain::zeros(rates.len(), t_s);
    let mut r = rng.rng();
    for (i, &rate) in rates.iter().enumerate() {
        if rate == 0.0 {
            continue;
        }
        let row = train.row_mut(i);
        if rate == 1.0 {
            row.fill(1);
            continue;
        }
        for v in row.iter_mut() {
            *v = (r.random::<f64>() < rate) as u8;
        }
    }
    Ok(train)
}

/// Turn a per-tick input series into its kernel response, in place.
///
/// `y(t) = Σ_{t'≤t} x(t')·(1 − a^{t−t'})` is evaluated as the running sum of
/// `x` minus an exponentially decaying trace, which is O(t_s).
#[inline]
pub fn kernel_filter_in_place(series: &mut [f64], kernel: KernelSpec) {
    let a = kernel.decay();
    let mut cumulative = 0.0;
    let mut trace = 0.0;
    for v in series.iter_mut() {
        let x = *v;
        cumulative += x;
        trace = a * trace + x;
        *v = cumulative - trace;
    }
}

/// Causal convolution of every row with the kernel.
pub fn convolve(spikes: &SpikeTrain, kernel: KernelSpec) -> PotentialSeries {
    let mut out = PotentialSeries::zeros(spikes.n_neurons(), spikes.t_s());
    for i in 0..spikes.n_neurons() {
        let row = out.row_mut(i);
        for (o, &s) in row.iter_mut().zip(spikes.row(i)) {
            *o = s as f64;
        }
        kernel_filter_in_place(row, kernel);
    }
    out
}

/// Fire a single row; the threshold starts at `theta` and rises by `theta`
/// after every spike. At most one spike per tick.
#[inline]
pub fn threshold_fire_row(potential: &[f64], theta: f64, out: &mut [u8]) {
    let mut v_th = theta;
    for (o, &p) in out.iter_mut().zip(potential) {
        if p >= v_th {
            *o = 1;
            v_th += theta;
        } else {
            *o = 0;
        }
    }
}

pub fn threshold_fire(potential: &PotentialSeries, theta: f64) -> Result<SpikeTrain> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Config(format!("theta must be positive, got {theta}")));
    }
    let mut train = SpikeTrain::zeros(potential.n_neurons(), potential.t_s());
    for i in 0..potential.n_neurons() {
        threshold_fire_row(potential.row(i), theta, train.row_mut(i));
    }
    Ok(train)
}
