use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DatasetKind;
use crate::error::{Error, Result};
use crate::net::{GateMode, LabelEncoding, NetworkConfig};
use crate::oracle::LossKind;
use crate::updates::{BatchReduction, OptimizerConfig, UpdateMode};

pub const PRESET_NAMES: [&str; 4] = ["rate_ts50", "rpu_ts100", "rpu_ts200", "rpu_ts300"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Snn,
    Ann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub weights: u64,
    pub encoding: u64,
    pub dropout: u64,
    pub subsample: u64,
}

impl Seeds {
    pub fn uniform(seed: u64) -> Self {
        Self {
            weights: seed,
            encoding: seed,
            dropout: seed,
            subsample: seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subset {
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    /// Overrides the dataset's default image orientation.
    pub transpose: Option<bool>,
    pub model: ModelKind,
    /// Loss of the ANN model; the spiking model always uses its own rule.
    pub ann_loss: LossKind,
    pub layer_sizes: Vec<usize>,
    pub update_mode: UpdateMode,
    pub t_s: usize,
    pub tau_x: f64,
    pub tau_delta: f64,
    pub theta: f64,
    pub eta: f64,
    pub batch_size: usize,
    pub batch_reduction: BatchReduction,
    pub epochs: usize,
    pub dropout_ps: Vec<f64>,
    pub wta_enabled: bool,
    pub w_inh: f64,
    pub wta_max_iters: usize,
    pub gate_mode: GateMode,
    pub label_rate: f64,
    /// Size of the fixed training subsample scored after every epoch.
    pub train_eval_count: usize,
    pub checkpoint_every_epoch: bool,
    pub seeds: Seeds,
    pub subset: Option<Subset>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        preset("rate_ts50").expect("built-in preset")
    }
}

/// Named simulation presets.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let (mode, t_s, tau_x, tau_delta, eta) = match name {
        "rate_ts50" => (UpdateMode::Rate, 50, 5.0, 0.5, 0.06),
        "rpu_ts100" => (UpdateMode::Rpu, 100, 10.0, 1.0, 0.04),
        "rpu_ts200" => (UpdateMode::Rpu, 200, 20.0, 2.0, 0.01),
        "rpu_ts300" => (UpdateMode::Rpu, 300, 30.0, 3.0, 0.005),
        _ => {
            return Err(Error::Config(format!(
                "unknown preset '{name}' (expected one of {})",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(ExperimentConfig {
        dataset: DatasetKind::Mnist,
        transpose: None,
        model: ModelKind::Snn,
        ann_loss: LossKind::SoftmaxCe,
        layer_sizes: vec![784, 1280, 10],
        update_mode: mode,
        t_s,
        tau_x,
        tau_delta,
        theta: 5.0,
        eta,
        batch_size: 50,
        batch_reduction: BatchReduction::Sum,
        epochs: 20,
        dropout_ps: vec![0.2, 0.3],
        wta_enabled: true,
        w_inh: DEFAULT_W_INH,
        wta_max_iters: 10,
        gate_mode: GateMode::Causal,
        label_rate: 0.5,
        train_eval_count: 2000,
        checkpoint_every_epoch: false,
        seeds: Seeds::uniform(1),
        subset: None,
    })
}

/// Preset whose simulation window is `t_s`, if one exists.
pub fn rpu_preset_for(t_s: usize) -> Result<ExperimentConfig> {
    preset(&format!("rpu_ts{t_s}"))
        .map_err(|_| Error::Config(format!("no RPU preset for t_s={t_s} (have 100, 200, 300)")))
}

/// Chosen on a validation split held out from the MNIST training set.
pub const DEFAULT_W_INH: f64 = 8.0;

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            layer_sizes: self.layer_sizes.clone(),
            theta: self.theta,
            tau_x: self.tau_x,
            tau_delta: self.tau_delta,
            t_s: self.t_s,
            wta_enabled: self.wta_enabled,
            w_inh: self.w_inh,
            wta_max_iters: self.wta_max_iters,
            dropout_ps: self.dropout_ps.clone(),
            gate_mode: self.gate_mode,
            label: LabelEncoding {
                target_rate: self.label_rate,
                off_rate: 0.0,
            },
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            eta: self.eta,
            batch_size: self.batch_size,
            t_s: self.t_s,
            reduction: self.batch_reduction,
        }
    }

    pub fn transpose(&self) -> bool {
        self.transpose.unwrap_or(self.dataset.default_transpose())
    }

    /// Tag written to the metrics file.
    pub fn mode_tag(&self) -> String {
        match self.model {
            ModelKind::Snn => self.update_mode.tag(),
            ModelKind::Ann => "ann-sgd".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network().validate()?;
        self.optimizer().validate()?;
        self.update_mode.validate()?;
        let n_classes = *self.layer_sizes.last().expect("validated");
        if n_classes != self.dataset.n_classes() {
            return Err(Error::Config(format!(
                "output layer has {n_classes} neurons, dataset has {} classes",
                self.dataset.n_classes()
            )));
        }
        if self.train_eval_count == 0 {
            return Err(Error::Config("train_eval_count must be at least 1".into()));
        }
        if let Some(s) = self.subset {
            if s.train == 0 || s.test == 0 {
                return Err(Error::Config("subset sizes must be positive".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_expand_to_table_values() {
        let rows = [
            ("rate_ts50", UpdateMode::Rate, 50, 5.0, 0.5, 0.06),
            ("rpu_ts100", UpdateMode::Rpu, 100, 10.0, 1.0, 0.04),
            ("rpu_ts200", UpdateMode::Rpu, 200, 20.0, 2.0, 0.01),
            ("rpu_ts300", UpdateMode::Rpu, 300, 30.0, 3.0, 0.005),
        ];
        for (name, mode, t_s, tx, td, eta) in rows {
            let c = preset(name).unwrap();
            assert_eq!(
                (c.update_mode, c.t_s, c.tau_x, c.tau_delta, c.theta, c.eta),
                (mode, t_s, tx, td, 5.0, eta)
            );
            assert_eq!(c.batch_size, 50);
            assert_eq!(c.dropout_ps, vec![0.2, 0.3]);
            assert_eq!(c.layer_sizes, vec![784, 1280, 10]);
            c.validate().unwrap();
        }
        assert!(matches!(preset("rpu_ts400"), Err(Error::Config(_))));
    }

    #[test]
    fn toml_roundtrip_and_hash() {
        let mut c = preset("rpu_ts200").unwrap();
        c.subset = Some(Subset { train: 100, test: 50 });
        c.update_mode = UpdateMode::QuantizedRate { levels: 7 };
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 16);
        let mut d = c.clone();
        d.seeds.dropout = 9;
        assert_ne!(d.hash(), c.hash());
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let c = ExperimentConfig::from_toml("epochs = 3\n[seeds]\nweights = 1\nencoding = 2\ndropout = 3\nsubsample = 4\n").unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.seeds.encoding, 2);
        assert_eq!(c.eta, 0.06);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("dataset = \"emnist\"").is_err());
        assert!(ExperimentConfig::from_toml("dropout_ps = [0.2]").is_err());
        assert!(ExperimentConfig::from_toml("eta = -1.0").is_err());
    }
}
