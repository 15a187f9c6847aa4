use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;

use super::checkpoint::Checkpoint;
use super::config::{ExperimentConfig, ModelKind};
use super::metrics::{write_metrics, write_timing, EpochMetrics};
use crate::data::{load_dataset, subsample, LabeledImageSet, SplitSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{init_network, run_sample, run_sample_with_masks, sample_dropout_masks, CompositeLayer, NetworkConfig, Phase, SampleActivity};
use crate::oracle::{mlp_forward, mlp_loss_and_gradient, predicted_class, MlpModel};
use crate::par::{map_ordered, with_workers};
use crate::rng::{role, RngStream};
use crate::updates::{batch_apply, BatchReduction, UpdateAccumulator};

/// Samples per work item inside a batch. Fixed so that the partition of a
/// batch never depends on the number of workers.
pub const CHUNK: usize = 5;

#[derive(Debug, Clone)]
pub struct RunContext {
    pub out_dir: PathBuf,
    /// Worker threads; 0 picks the number of available cores.
    pub workers: usize,
    pub progress: bool,
}

impl RunContext {
    pub fn new(out_dir: impl Into<PathBuf>, workers: usize) -> Self {
        Self {
            out_dir: out_dir.into(),
            workers,
            progress: false,
        }
    }
}

/// Which set is being scored. Each has its own encoding streams, so a
/// re-evaluation reproduces the logged numbers exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    /// The fixed training subsample scored after every epoch.
    TrainEval,
    Test,
    Train,
}

impl EvalSplit {
    fn stream_id(self) -> u64 {
        match self {
            EvalSplit::TrainEval => 0,
            EvalSplit::Test => 1,
            EvalSplit::Train => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: LabeledImageSet,
    pub test: LabeledImageSet,
    pub train_eval: LabeledImageSet,
}

impl Datasets {
    pub fn split(&self, split: EvalSplit) -> &LabeledImageSet {
        match split {
            EvalSplit::TrainEval => &self.train_eval,
            EvalSplit::Test => &self.test,
            EvalSplit::Train => &self.train,
        }
    }
}

pub fn load_data(cfg: &ExperimentConfig, data_dir: &Path) -> Result<Datasets> {
    cfg.validate()?;
    let (train, test) = load_dataset(cfg.dataset, data_dir, cfg.transpose())?;
    prepare_data(cfg, train, test)
}

/// Apply the configured subset and draw the train-accuracy subsample.
pub fn prepare_data(cfg: &ExperimentConfig, train: LabeledImageSet, test: LabeledImageSet) -> Result<Datasets> {
    for set in [&train, &test] {
        if set.dim() != cfg.layer_sizes[0] || set.n_classes() != cfg.dataset.n_classes() {
            return Err(Error::Config(format!(
                "data has {} inputs and {} classes, config expects {} and {}",
                set.dim(),
                set.n_classes(),
                cfg.layer_sizes[0],
                cfg.dataset.n_classes()
            )));
        }
    }
    let (train, test) = match cfg.subset {
        Some(s) => SplitSpec {
            train_count: s.train,
            test_count: s.test,
            seed: cfg.seeds.subsample,
        }
        .apply(&train, &test)?,
        None => (train, test),
    };
    let n = cfg.train_eval_count.min(train.len());
    let train_eval = subsample(&train, n, &RngStream::new(cfg.seeds.subsample, role::SUBSAMPLE))?;
    Ok(Datasets {
        train,
        test,
        train_eval,
    })
}

#[derive(Debug, Clone)]
pub enum Model {
    Snn(Vec<CompositeLayer>),
    Ann(MlpModel),
}

impl Model {
    pub fn init(cfg: &ExperimentConfig) -> Result<Self> {
        let layers = init_network(&cfg.network(), &RngStream::new(cfg.seeds.weights, 0))?;
        Self::from_weights(cfg, layers.into_iter().map(|l| l.weights().clone()).collect())
    }

    fn from_weights(cfg: &ExperimentConfig, weights: Vec<Matrix>) -> Result<Self> {
        Ok(match cfg.model {
            ModelKind::Snn => Model::Snn(
                weights
                    .into_iter()
                    .zip(&cfg.dropout_ps)
                    .map(|(w, &p)| CompositeLayer::new(w, p))
                    .collect::<Result<_>>()?,
            ),
            ModelKind::Ann => Model::Ann(MlpModel::new(weights, cfg.dropout_ps.clone(), cfg.ann_loss)?),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint, cfg: &ExperimentConfig) -> Result<Self> {
        if ck.layer_sizes != cfg.layer_sizes {
            return Err(Error::Checkpoint(format!(
                "checkpoint layers {:?} do not match config {:?}",
                ck.layer_sizes, cfg.layer_sizes
            )));
        }
        if ck.theta != cfg.theta {
            return Err(Error::Checkpoint(format!(
                "checkpoint theta {} does not match config {}",
                ck.theta, cfg.theta
            )));
        }
        Self::from_weights(cfg, ck.weights.clone())
    }

    pub fn weights(&self) -> Vec<Matrix> {
        match self {
            Model::Snn(layers) => layers.iter().map(|l| l.weights().clone()).collect(),
            Model::Ann(m) => m.weights.clone(),
        }
    }

    pub fn checkpoint(&self, cfg: &ExperimentConfig) -> Result<Checkpoint> {
        Checkpoint::new(cfg.layer_sizes.clone(), cfg.theta, cfg.wta_enabled, self.weights())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub correct: usize,
    pub samples: usize,
    /// Mean forward spikes per sample for each layer (empty for the ANN).
    pub mean_spikes: Vec<f64>,
}

fn eval_stream(cfg: &ExperimentConfig, split: EvalSplit, index: usize) -> RngStream {
    RngStream::new(cfg.seeds.encoding, role::EVAL).sub_path(&[split.stream_id(), index as u64])
}

/// Inference pass of an SNN on sample `index` of `split`, using the same
/// encoding stream as every other evaluation of that sample.
pub fn infer_sample(
    net: &[CompositeLayer],
    cfg: &ExperimentConfig,
    ncfg: &NetworkConfig,
    set: &LabeledImageSet,
    split: EvalSplit,
    index: usize,
) -> Result<SampleActivity> {
    run_sample(net, &set.rates(index), None, ncfg, &eval_stream(cfg, split, index), Phase::Infer)
}

/// Score a model on one split. Runs on the current worker pool.
pub fn evaluate(model: &Model, cfg: &ExperimentConfig, data: &Datasets, split: EvalSplit) -> Result<EvalResult> {
    let set = data.split(split);
    let indices: Vec<usize> = (0..set.len()).collect();
    let ncfg = cfg.network();
    let per_sample: Vec<Result<(bool, Vec<u64>)>> = match model {
        Model::Snn(net) => map_ordered(&indices, |&i| {
            let act = infer_sample(net, cfg, &ncfg, set, split, i)?;
            Ok((act.predicted_class() == set.label(i), act.spikes_per_layer()))
        }),
        Model::Ann(m) => map_ordered(&indices, |&i| {
            let out = mlp_forward(m, &set.rates(i)).output;
            Ok((predicted_class(&out) == set.label(i), Vec::new()))
        }),
    };
    let mut correct = 0;
    let mut spikes: Vec<u64> = Vec::new();
    for r in per_sample {
        let (ok, s) = r?;
        correct += ok as usize;
        if spikes.is_empty() {
            spikes = s;
        } else {
            spikes.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
        }
    }
    let n = set.len().max(1) as f64;
    Ok(EvalResult {
        accuracy: correct as f64 / n,
        correct,
        samples: set.len(),
        mean_spikes: spikes.iter().map(|&s| s as f64 / n).collect(),
    })
}

fn epoch_order(n: usize, cfg: &ExperimentConfig, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut RngStream::new(cfg.seeds.encoding, role::SHUFFLE).sub(epoch as u64).rng());
    order
}

fn train_masks(cfg: &ExperimentConfig, ncfg: &NetworkConfig, epoch: usize, index: usize) -> Vec<Vec<bool>> {
    let stream = RngStream::new(cfg.seeds.dropout, role::DROPOUT).sub_path(&[epoch as u64, index as u64]);
    sample_dropout_masks(ncfg, &stream)
}

/// Squared error between output rates and the label's target rates.
fn rate_loss(act: &SampleActivity, label: usize, ncfg: &NetworkConfig) -> f64 {
    let t = ncfg.t_s as f64;
    let target = ncfg.label.rates(label, ncfg.n_classes());
    0.5 * act
        .output()
        .counts()
        .iter()
        .zip(&target)
        .map(|(&c, y)| (c as f64 / t - y).powi(2))
        .sum::<f64>()
}

/// One pass over `train` in a seeded order; returns the mean training loss.
pub fn train_epoch(model: &mut Model, cfg: &ExperimentConfig, train: &LabeledImageSet, epoch: usize) -> Result<f64> {
    let order = epoch_order(train.len(), cfg, epoch);
    let ncfg = cfg.network();
    let mut loss_sum = 0.0;
    match model {
        Model::Snn(net) => {
            let mut acc = UpdateAccumulator::for_network(cfg.update_mode, cfg.optimizer(), net)?;
            for batch in order.chunks(cfg.batch_size) {
                let chunks: Vec<&[usize]> = batch.chunks(CHUNK).collect();
                let frozen: &[CompositeLayer] = net;
                let parts = map_ordered(&chunks, |chunk| -> Result<(UpdateAccumulator, f64)> {
                    let mut part = UpdateAccumulator::for_network(cfg.update_mode, cfg.optimizer(), frozen)?;
                    let mut loss = 0.0;
                    for &i in *chunk {
                        let stream = RngStream::new(cfg.seeds.encoding, role::TRAIN).sub_path(&[epoch as u64, i as u64]);
                        let act = run_sample_with_masks(
                            frozen,
                            &train.rates(i),
                            Some(train.label(i)),
                            &ncfg,
                            &stream,
                            Phase::Train,
                            Some(train_masks(cfg, &ncfg, epoch, i)),
                        )?;
                        loss += rate_loss(&act, train.label(i), &ncfg);
                        part.accumulate(&act)?;
                    }
                    Ok((part, loss))
                });
                for p in parts {
                    let (part, loss) = p?;
                    acc.merge(&part)?;
                    loss_sum += loss;
                }
                batch_apply(net, &mut acc)?;
            }
        }
        Model::Ann(m) => {
            for batch in order.chunks(cfg.batch_size) {
                let chunks: Vec<&[usize]> = batch.chunks(CHUNK).collect();
                let frozen: &MlpModel = m;
                let parts = map_ordered(&chunks, |chunk| {
                    let mut sum: Option<Vec<Matrix>> = None;
                    let mut loss = 0.0;
                    for &i in *chunk {
                        let masks = train_masks(cfg, &ncfg, epoch, i);
                        let target = frozen.target(train.label(i), cfg.label_rate, 0.0);
                        let (l, g) = mlp_loss_and_gradient(frozen, &train.rates(i), &target, Some(&masks));
                        loss += l;
                        match &mut sum {
                            None => sum = Some(g),
                            Some(s) => s.iter_mut().zip(&g).for_each(|(a, b)| a.add_scaled(b, 1.0)),
                        }
                    }
                    (sum.expect("chunks are nonempty"), loss)
                });
                let scale = match cfg.batch_reduction {
                    BatchReduction::Mean => -cfg.eta / batch.len() as f64,
                    BatchReduction::Sum => -cfg.eta,
                };
                for (grads, loss) in parts {
                    for (w, g) in m.weights.iter_mut().zip(&grads) {
                        w.add_scaled(g, scale);
                    }
                    loss_sum += loss;
                }
            }
        }
    }
    Ok(loss_sum / train.len().max(1) as f64)
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub config_hash: String,
    pub metrics: Vec<EpochMetrics>,
    pub checkpoint: Checkpoint,
    pub metrics_path: PathBuf,
    pub timing_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub config_path: PathBuf,
}

impl TrainReport {
    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.metrics.last().map(|m| m.test_accuracy)
    }
}

pub fn output_paths(cfg: &ExperimentConfig, out_dir: &Path) -> [PathBuf; 4] {
    let h = cfg.hash();
    [
        out_dir.join(format!("metrics-{h}.csv")),
        out_dir.join(format!("timing-{h}.csv")),
        out_dir.join(format!("checkpoint-{h}.bin")),
        out_dir.join(format!("config-{h}.toml")),
    ]
}

pub fn run_train(cfg: &ExperimentConfig, data_dir: &Path, ctx: &RunContext) -> Result<TrainReport> {
    let data = load_data(cfg, data_dir)?;
    train_on(cfg, &data, ctx)
}

/// Train with already-loaded data, writing metrics, timing, the expanded
/// config and the final checkpoint to `ctx.out_dir`.
pub fn train_on(cfg: &ExperimentConfig, data: &Datasets, ctx: &RunContext) -> Result<TrainReport> {
    cfg.validate()?;
    std::fs::create_dir_all(&ctx.out_dir)?;
    let [metrics_path, timing_path, checkpoint_path, config_path] = output_paths(cfg, &ctx.out_dir);
    std::fs::write(&config_path, cfg.to_toml())?;
    let n_spike_layers = match cfg.model {
        ModelKind::Snn => cfg.layer_sizes.len(),
        ModelKind::Ann => 0,
    };
    write_metrics(&metrics_path, n_spike_layers, &[])?;
    write_timing(&timing_path, &[])?;

    let (model, metrics) = with_workers(ctx.workers, || -> Result<(Model, Vec<EpochMetrics>)> {
        let mut model = Model::init(cfg)?;
        let mut metrics = Vec::new();
        for epoch in 1..=cfg.epochs {
            let start = Instant::now();
            let train_loss = train_epoch(&mut model, cfg, &data.train, epoch)?;
            let tr = evaluate(&model, cfg, data, EvalSplit::TrainEval)?;
            let te = evaluate(&model, cfg, data, EvalSplit::Test)?;
            let row = EpochMetrics {
                epoch,
                train_accuracy: tr.accuracy,
                test_accuracy: te.accuracy,
                train_loss,
                mean_spikes: te.mean_spikes,
                wall_seconds: start.elapsed().as_secs_f64(),
                update_mode: cfg.mode_tag(),
            };
            if ctx.progress {
                eprintln!(
                    "epoch {epoch}/{}: loss {:.5} train {:.4} test {:.4} ({:.1}s)",
                    cfg.epochs, row.train_loss, row.train_accuracy, row.test_accuracy, row.wall_seconds
                );
            }
            metrics.push(row);
            write_metrics(&metrics_path, n_spike_layers, &metrics)?;
            write_timing(&timing_path, &metrics)?;
            if cfg.checkpoint_every_epoch {
                let p = ctx.out_dir.join(format!("checkpoint-{}-e{epoch}.bin", cfg.hash()));
                model.checkpoint(cfg)?.save(p)?;
            }
        }
        Ok((model, metrics))
    })??;

    let checkpoint = model.checkpoint(cfg)?;
    checkpoint.save(&checkpoint_path)?;
    Ok(TrainReport {
        config_hash: cfg.hash(),
        metrics,
        checkpoint,
        metrics_path,
        timing_path,
        checkpoint_path,
        config_path,
    })
}

/// Accuracy of a saved checkpoint on one split.
pub fn run_eval(
    checkpoint_path: &Path,
    cfg: &ExperimentConfig,
    data: &Datasets,
    split: EvalSplit,
    workers: usize,
) -> Result<EvalResult> {
    let ck = Checkpoint::load(checkpoint_path)?;
    let model = Model::from_checkpoint(&ck, cfg)?;
    with_workers(workers, || evaluate(&model, cfg, data, split))?
}
