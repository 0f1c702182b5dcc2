use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::pruning_math::Kernel;

/// Summary of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    pub loss: f64,
    pub cross_entropy: f64,
    pub weight_decay: f64,
    pub threshold_loss: f64,
    pub train_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_accuracy: Option<f64>,
    /// Thresholds per parameterized layer.
    pub thresholds: Vec<Vec<f64>>,
    /// Fraction of each layer's weights that would survive the cutoff.
    pub live_fraction: Vec<f64>,
}

impl EpochRecord {
    pub fn mean_threshold(&self) -> f64 {
        let all: Vec<f64> = self.thresholds.iter().flatten().copied().collect();
        if all.is_empty() {
            0.0
        } else {
            all.iter().sum::<f64>() / all.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn new(config: TrainConfig) -> Self {
        TrainReport {
            config,
            epochs: Vec::new(),
        }
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// One JSON object per epoch, newline-terminated.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for record in &self.epochs {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Equal-width histogram over `[min, max]` of `values`. The last bin is
/// closed on the right.
pub fn weight_histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    let bins = bins.max(1);
    if values.is_empty() {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            left: lo + i as f64 * width,
            right: if i + 1 == bins {
                hi.max(lo + width)
            } else {
                lo + (i + 1) as f64 * width
            },
            count,
        })
        .collect()
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin_left,bin_right,count\n");
    for b in bins {
        let _ = writeln!(out, "{},{},{}", b.left, b.right, b.count);
    }
    out
}

/// Among weights with `|theta(w; t)| >= gamma`, the fraction whose magnitude
/// lies in `[t, 2t]`. `thresholds` has one entry per contiguous group.
pub fn band_fraction(weights: &[f64], thresholds: &[f64], alpha: f64, gamma: f64) -> f64 {
    if thresholds.is_empty() || weights.is_empty() {
        return 0.0;
    }
    let block = weights.len() / thresholds.len();
    let mut survivors = 0usize;
    let mut in_band = 0usize;
    for (chunk, &t) in weights.chunks(block).zip(thresholds) {
        let kernel = Kernel::new(alpha, t);
        for &w in chunk {
            if kernel.value(w).abs() >= gamma {
                survivors += 1;
                let m = w.abs();
                if m >= t && m <= 2.0 * t {
                    in_band += 1;
                }
            }
        }
    }
    if survivors == 0 {
        0.0
    } else {
        in_band as f64 / survivors as f64
    }
}
