use std::path::Path;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Mean training loss over the epoch's samples.
    pub train_loss: f64,
    /// Mean forward spikes per test sample, one entry per layer.
    pub mean_spikes: Vec<f64>,
    pub wall_seconds: f64,
    pub update_mode: String,
}

pub fn metrics_header(n_spike_layers: usize) -> Vec<String> {
    let mut h: Vec<String> = ["epoch", "train_accuracy", "test_accuracy", "train_loss"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..n_spike_layers).map(|l| format!("spikes_l{l}")));
    h.push("update_mode".into());
    h
}

/// Writes every row so far. Wall-clock time is left out so that reruns of
/// the same configuration produce identical bytes; see [`write_timing`].
pub fn write_metrics(path: &Path, n_spike_layers: usize, rows: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(metrics_header(n_spike_layers))?;
    for m in rows {
        let mut rec = vec![
            m.epoch.to_string(),
            format!("{:.6}", m.train_accuracy),
            format!("{:.6}", m.test_accuracy),
            format!("{:.8}", m.train_loss),
        ];
        rec.extend(m.mean_spikes.iter().map(|s| format!("{s:.4}")));
        rec.push(m.update_mode.clone());
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timing(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "wall_seconds"])?;
    for m in rows {
        w.write_record([m.epoch.to_string(), format!("{:.3}", m.wall_seconds)])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `(epoch, train_accuracy, test_accuracy)` back from a metrics file.
pub fn read_accuracies(path: &Path) -> Result<Vec<(usize, f64, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| crate::Error::Format {
                    offset: i,
                    message: format!("bad metrics field in {}", path.display()),
                })
        };
        out.push((parse(0)? as usize, parse(1)?, parse(2)?));
    }
    Ok(out)
}
