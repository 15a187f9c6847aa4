use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{rpu_preset_for, ExperimentConfig};
use super::train::{infer_sample, train_on, Datasets, EvalSplit, RunContext, TrainReport};
use crate::error::{Error, Result};
use crate::net::{forward_potential, init_network, run_sample, wta_iterate, CompositeLayer, GateMode, LabelEncoding, NetworkConfig, Phase};
use crate::oracle::{gradient_correlation_flat, mlp_backward, LossKind, MlpModel};
use crate::par::{map_ordered, with_workers};
use crate::rng::{role, RngStream};
use crate::updates::{BatchReduction, OptimizerConfig, UpdateAccumulator, UpdateMode};

/// Sorted, normalized mean output profiles over a test split.
#[derive(Debug, Clone, PartialEq)]
pub struct WtaProfiles {
    /// Output counts without lateral inhibition.
    pub raw: Vec<f64>,
    pub wta: Vec<f64>,
    /// Softmax applied to the raw counts.
    pub softmax: Vec<f64>,
    pub samples: usize,
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Normalize to unit sum and sort descending. An all-zero vector becomes
/// uniform.
pub fn sorted_profile(values: &[f64]) -> Vec<f64> {
    let total: f64 = values.iter().sum();
    let mut p: Vec<f64> = if total > 0.0 {
        values.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / values.len() as f64; values.len()]
    };
    p.sort_by(|a, b| b.total_cmp(a));
    p
}

pub fn softmax(values: &[f64]) -> Vec<f64> {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = values.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Per-sample `(raw, wta, softmax)` sorted profiles from output counts.
pub fn sample_profiles(raw_counts: &[f64], wta_counts: &[f64]) -> [Vec<f64>; 3] {
    [
        sorted_profile(raw_counts),
        sorted_profile(wta_counts),
        sorted_profile(&softmax(raw_counts)),
    ]
}

impl WtaProfiles {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["rank", "raw", "wta", "softmax_of_raw"])?;
        for k in 0..self.raw.len() {
            w.write_record([
                k.to_string(),
                format!("{:.8}", self.raw[k]),
                format!("{:.8}", self.wta[k]),
                format!("{:.8}", self.softmax[k]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Present every test sample once, reading the output both without and with
/// lateral inhibition from the same feedforward drive.
pub fn compare_wta_softmax(net: &[CompositeLayer], cfg: &ExperimentConfig, data: &Datasets) -> Result<WtaProfiles> {
    let mut raw_cfg = cfg.network();
    raw_cfg.wta_enabled = false;
    let mut wta_cfg = cfg.network();
    wta_cfg.wta_enabled = true;
    let set = &data.test;
    let indices: Vec<usize> = (0..set.len()).collect();
    let per_sample = map_ordered(&indices, |&i| -> Result<[Vec<f64>; 3]> {
        let act = infer_sample(net, cfg, &raw_cfg, set, EvalSplit::Test, i)?;
        let last = net.len() - 1;
        let ff = forward_potential(&net[last], &act.forward[last], &wta_cfg, Phase::Infer)?;
        let (wta, _) = wta_iterate(&ff, act.output().clone(), &wta_cfg);
        let as_f64 = |c: Vec<u32>| c.into_iter().map(f64::from).collect::<Vec<_>>();
        Ok(sample_profiles(&as_f64(act.output().counts()), &as_f64(wta.counts())))
    });
    let n_out = *cfg.layer_sizes.last().expect("validated");
    let mut sums = [vec![0.0; n_out], vec![0.0; n_out], vec![0.0; n_out]];
    for r in per_sample {
        for (s, p) in sums.iter_mut().zip(r?) {
            s.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
        }
    }
    let n = set.len().max(1) as f64;
    let [raw, wta, softmax] = sums.map(|s| s.into_iter().map(|v| v / n).collect());
    Ok(WtaProfiles {
        raw,
        wta,
        softmax,
        samples: set.len(),
    })
}

/// One run of a simulation-window sweep.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub t_s: usize,
    pub config: ExperimentConfig,
}

/// For every window length, an RPU run with that preset's parameters and a
/// quantized-rate run on the base window with `levels = t_s` and the same
/// learning rate. Everything else (data, seeds, epochs) comes from `base`.
pub fn sweep_configs(base: &ExperimentConfig, ts_list: &[usize]) -> Result<Vec<SweepRun>> {
    if ts_list.is_empty() {
        return Err(Error::Config("empty t_s list".into()));
    }
    let mut runs = Vec::new();
    for &t_s in ts_list {
        let row = rpu_preset_for(t_s)?;
        let mut rpu = base.clone();
        rpu.update_mode = UpdateMode::Rpu;
        rpu.t_s = row.t_s;
        rpu.tau_x = row.tau_x;
        rpu.tau_delta = row.tau_delta;
        rpu.eta = row.eta;
        let mut quant = base.clone();
        quant.update_mode = UpdateMode::QuantizedRate { levels: t_s as u32 };
        quant.eta = row.eta;
        runs.push(SweepRun { t_s, config: rpu });
        runs.push(SweepRun { t_s, config: quant });
    }
    Ok(runs)
}

pub fn sweep_ts(base: &ExperimentConfig, ts_list: &[usize], data: &Datasets, ctx: &RunContext) -> Result<Vec<(SweepRun, TrainReport)>> {
    let mut out = Vec::new();
    for run in sweep_configs(base, ts_list)? {
        let report = train_on(&run.config, data, ctx)?;
        out.push((run, report));
    }
    let path = ctx.out_dir.join(format!("sweep-{}.csv", base.hash()));
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t_s", "update_mode", "config_hash", "final_test_accuracy"])?;
    for (run, report) in &out {
        w.write_record([
            run.t_s.to_string(),
            run.config.mode_tag(),
            report.config_hash.clone(),
            report
                .final_test_accuracy()
                .map(|a| format!("{a:.6}"))
                .unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(out)
}

/// Variants for the loss/regularization ladder: squared error without
/// dropout, squared error with the base dropout, and lateral inhibition
/// with the base dropout.
pub fn loss_ladder(base: &ExperimentConfig) -> [(&'static str, ExperimentConfig); 3] {
    let mut mse = base.clone();
    mse.wta_enabled = false;
    mse.dropout_ps = vec![0.0; base.dropout_ps.len()];
    let mut mse_dropout = base.clone();
    mse_dropout.wta_enabled = false;
    let mut wta_dropout = base.clone();
    wta_dropout.wta_enabled = true;
    [("mse", mse), ("mse-dropout", mse_dropout), ("wta-dropout", wta_dropout)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradientCheckConfig {
    pub layer_sizes: Vec<usize>,
    pub t_s: usize,
    pub tau_x: f64,
    pub tau_delta: f64,
    pub theta: f64,
    pub label_rate: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for GradientCheckConfig {
    fn default() -> Self {
        Self {
            layer_sizes: vec![16, 8, 4],
            t_s: 2000,
            tau_x: 5.0,
            tau_delta: 0.5,
            theta: 5.0,
            label_rate: 0.5,
            trials: 50,
            seed: 0,
        }
    }
}

impl GradientCheckConfig {
    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            layer_sizes: self.layer_sizes.clone(),
            theta: self.theta,
            tau_x: self.tau_x,
            tau_delta: self.tau_delta,
            t_s: self.t_s,
            wta_enabled: false,
            w_inh: 0.0,
            wta_max_iters: 1,
            dropout_ps: vec![0.0; self.layer_sizes.len() - 1],
            gate_mode: GateMode::Causal,
            label: LabelEncoding {
                target_rate: self.label_rate,
                off_rate: 0.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    /// Cosine per trial; trials with a zero-norm side are recorded as 0.
    pub cosines: Vec<f64>,
    pub sign_agreements: Vec<f64>,
    /// Trials where either side had zero norm.
    pub undefined: usize,
    pub mean_cosine: f64,
    pub std_cosine: f64,
    pub mean_sign_agreement: f64,
    pub std_sign_agreement: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Spike-based rate-mode delta and the exact squared-error gradient of the
/// matching ReLU network for one random network, input and label.
pub fn gradient_trial(gc: &GradientCheckConfig, trial: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let ncfg = gc.network();
    let stream = RngStream::new(gc.seed, role::TRAIN).sub(trial as u64);
    let net = init_network(&ncfg, &stream)?;
    let mut r = stream.sub(role::SUBSAMPLE).rng();
    let rates: Vec<f64> = (0..gc.layer_sizes[0]).map(|_| r.random::<f64>()).collect();
    let label = r.random_range(0..ncfg.n_classes());
    let act = run_sample(&net, &rates, Some(label), &ncfg, &stream, Phase::Train)?;
    let opt = OptimizerConfig {
        eta: 1.0,
        batch_size: 1,
        t_s: gc.t_s,
        reduction: BatchReduction::Sum,
    };
    let mut acc = UpdateAccumulator::for_network(UpdateMode::Rate, opt, &net)?;
    acc.accumulate(&act)?;
    let snn: Vec<f64> = (0..net.len()).flat_map(|l| acc.delta(l).as_slice().to_vec()).collect();

    let model = MlpModel::new(
        net.iter().map(|l| l.weights().clone()).collect(),
        ncfg.dropout_ps.clone(),
        LossKind::Mse,
    )?
    .with_gain(1.0 / gc.theta);
    let target = model.target(label, gc.label_rate, 0.0);
    let ann: Vec<f64> = mlp_backward(&model, &rates, &target)
        .iter()
        .flat_map(|g| g.as_slice().to_vec())
        .collect();
    Ok((snn, ann))
}

pub fn gradient_check(gc: &GradientCheckConfig, workers: usize) -> Result<GradientReport> {
    if gc.layer_sizes.len() < 2 || gc.trials == 0 {
        return Err(Error::Config("gradient check needs layers and at least one trial".into()));
    }
    gc.network().validate()?;
    let trials: Vec<usize> = (0..gc.trials).collect();
    let results = with_workers(workers, || map_ordered(&trials, |&t| gradient_trial(gc, t)))?;
    let mut cosines = Vec::new();
    let mut signs = Vec::new();
    let mut undefined = 0;
    for r in results {
        let (snn, ann) = r?;
        match gradient_correlation_flat(&snn, &ann) {
            Ok((c, s)) => {
                cosines.push(c);
                signs.push(s);
            }
            Err(Error::UndefinedSimilarity(_)) => {
                undefined += 1;
                cosines.push(0.0);
                signs.push(0.0);
            }
            Err(e) => return Err(e),
        }
    }
    let (mean_cosine, std_cosine) = mean_std(&cosines);
    let (mean_sign_agreement, std_sign_agreement) = mean_std(&signs);
    Ok(GradientReport {
        cosines,
        sign_agreements: signs,
        undefined,
        mean_cosine,
        std_cosine,
        mean_sign_agreement,
        std_sign_agreement,
    })
}

impl GradientReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["trial", "cosine", "sign_agreement"])?;
        for (i, (c, s)) in self.cosines.iter().zip(&self.sign_agreements).enumerate() {
            w.write_record([i.to_string(), format!("{c:.8}"), format!("{s:.8}")])?;
        }
        w.flush()?;
        Ok(())
    }
}
