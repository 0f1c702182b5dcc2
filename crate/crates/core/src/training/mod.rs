//! Joint training of weights and thresholds.
//!
//! The objective is `L = L0 + L_wd + L_t`:
//!
//! * `L0`: mean softmax cross-entropy of the sibling network,
//! * `L_wd = lambda_wd * sum_j ||W_j||^2` over raw weights (biases excluded),
//! * `L_t = lambda_t * sum_j ||theta(W_j; t_j)||_1`, which only ever sends
//!   gradient to the thresholds.
//!
//! Thresholds train with their learning rate multiplied by `rho` and are
//! projected back onto `t >= 0` after every step.

mod optimizer;
mod report;

use std::thread;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::data_io::Dataset;
use crate::error::{Error, Result};
use crate::export;
use crate::network::{init_weights, ForwardPass, Network, NetworkSpec};
use crate::tensor::{Real, Tensor};

pub use optimizer::{project_thresholds, step, Optimizer, OptimizerKind};
pub use report::{band_fraction, histogram_csv, weight_histogram, EpochRecord, HistogramBin, TrainReport};

/// Hyper-parameters of a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Sharpness of the pruning function.
    pub alpha: f64,
    /// Fraction of each group's weights initially below its threshold.
    pub p_init: f64,
    /// Threshold learning-rate factor.
    pub rho: f64,
    pub lambda_t: f64,
    pub lambda_wd: f64,
    /// Cutoff on mapped weight magnitude used at export.
    pub gamma: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Data-parallel workers per batch; 1 runs single-threaded.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1e2,
            p_init: 1e-1,
            rho: 1e-2,
            lambda_t: 1e-2,
            lambda_wd: 1e-4,
            gamma: 1e-3,
            optimizer: OptimizerKind::adam(1e-3),
            batch_size: 64,
            epochs: 20,
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("rho", self.rho),
            ("gamma", self.gamma),
            ("lr", self.optimizer.lr()),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("lambda_t", self.lambda_t), ("lambda_wd", self.lambda_wd)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.p_init) {
            return Err(Error::Config(format!("p_init must lie in [0, 1), got {}", self.p_init)));
        }
        if let OptimizerKind::Adam { beta1, beta2, eps, .. } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps.is_nan() || eps <= 0.0 {
                return Err(Error::Config("invalid Adam moments".into()));
            }
        }
        if let OptimizerKind::Sgd { momentum, .. } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return Err(Error::Config(format!("momentum must lie in [0, 1), got {momentum}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be positive".into()));
        }
        Ok(())
    }

    /// Stable 64-bit FNV-1a digest of the configuration, for provenance.
    pub fn digest(&self) -> u64 {
        let text = serde_json::to_string(self).expect("config serializes");
        text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}

/// Node handles of the assembled objective.
#[derive(Debug, Clone)]
pub struct LossNodes {
    pub total: NodeId,
    pub cross_entropy: NodeId,
    /// Already multiplied by `lambda_wd`; absent when it is zero.
    pub weight_decay: Option<NodeId>,
    /// Already multiplied by `lambda_t`; absent when zero or without thresholds.
    pub threshold: Option<NodeId>,
    pub forward: ForwardPass,
}

/// Loss values read back from a graph.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub cross_entropy: f64,
    pub weight_decay: f64,
    pub threshold: f64,
}

impl LossNodes {
    pub fn values<T: Real>(&self, g: &Graph<T>) -> LossValues {
        let read = |id: Option<NodeId>| id.map_or(0.0, |id| g.value(id).data()[0].as_f64());
        LossValues {
            total: read(Some(self.total)),
            cross_entropy: read(Some(self.cross_entropy)),
            weight_decay: read(self.weight_decay),
            threshold: read(self.threshold),
        }
    }
}

/// Builds `L0 + L_wd + L_t` for one batch on `g`.
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    net: &Network<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<LossNodes> {
    assemble_loss(g, net, batch, labels, cfg, 1.0, true)
}

// `ce_weight` rescales the cross-entropy of a data-parallel shard; the
// regularizers are added by a single shard only.
fn assemble_loss<T: Real>(
    g: &mut Graph<T>,
    net: &Network<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    cfg: &TrainConfig,
    ce_weight: f64,
    with_regularizers: bool,
) -> Result<LossNodes> {
    let forward = net.forward(g, batch)?;
    let mut cross_entropy = g.softmax_cross_entropy(forward.logits, labels)?;
    if ce_weight != 1.0 {
        cross_entropy = g.scale(cross_entropy, T::from_f64(ce_weight))?;
    }
    let mut total = cross_entropy;
    let mut weight_decay = None;
    let mut threshold = None;
    if with_regularizers {
        if cfg.lambda_wd > 0.0 {
            let weights: Vec<NodeId> = forward.params.iter().map(|p| p.weight).collect();
            let sum = g.l2_sum(&weights)?;
            let term = g.scale(sum, T::from_f64(cfg.lambda_wd))?;
            total = g.add(total, term)?;
            weight_decay = Some(term);
        }
        if cfg.lambda_t > 0.0 {
            let mut acc: Option<NodeId> = None;
            for p in &forward.params {
                if p.threshold.is_some() {
                    let l1 = g.l1_of_theta_map(p.effective_weight)?;
                    acc = Some(match acc {
                        Some(prev) => g.add(prev, l1)?,
                        None => l1,
                    });
                }
            }
            if let Some(sum) = acc {
                let term = g.scale(sum, T::from_f64(cfg.lambda_t))?;
                total = g.add(total, term)?;
                threshold = Some(term);
            }
        }
    }
    Ok(LossNodes {
        total,
        cross_entropy,
        weight_decay,
        threshold,
        forward,
    })
}

struct ShardResult {
    grads: Vec<Tensor<f32>>,
    losses: LossValues,
    correct: usize,
}

fn run_shard(
    net: &Network<f32>,
    images: &Tensor<f32>,
    labels: &[usize],
    cfg: &TrainConfig,
    ce_weight: f64,
    with_regularizers: bool,
) -> Result<ShardResult> {
    let mut g = Graph::new();
    let loss = assemble_loss(&mut g, net, images, labels, cfg, ce_weight, with_regularizers)?;
    g.backward(loss.total)?;
    let mut grads = Vec::new();
    for p in &loss.forward.params {
        grads.push(g.grad_or_zeros(p.weight));
        grads.push(g.grad_or_zeros(p.bias));
        if let Some(t) = p.threshold {
            grads.push(g.grad_or_zeros(t));
        }
    }
    let predicted = g.value(loss.forward.logits).argmax_rows();
    let correct = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(ShardResult {
        grads,
        losses: loss.values(&g),
        correct,
    })
}

/// Computes gradients for one batch, split over `cfg.threads` workers whose
/// partial results are reduced in worker order. Returns summed losses and the
/// number of correct predictions.
fn batch_gradients(
    net: &mut Network<f32>,
    images: &Tensor<f32>,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(LossValues, usize)> {
    let n = labels.len();
    let workers = cfg.threads.min(n).max(1);
    let shards: Vec<ShardResult> = if workers == 1 {
        vec![run_shard(net, images, labels, cfg, 1.0, true)?]
    } else {
        let chunk = n.div_ceil(workers);
        let bounds: Vec<(usize, usize)> = (0..n)
            .step_by(chunk)
            .map(|start| (start, (start + chunk).min(n)))
            .collect();
        let frozen: &Network<f32> = net;
        let results: Vec<Result<ShardResult>> = thread::scope(|scope| {
            let handles: Vec<_> = bounds
                .iter()
                .enumerate()
                .map(|(w, &(start, end))| {
                    scope.spawn(move || {
                        let part = images.slice_outer(start, end - start)?;
                        let weight = (end - start) as f64 / n as f64;
                        run_shard(frozen, &part, &labels[start..end], cfg, weight, w == 0)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        results.into_iter().collect::<Result<_>>()?
    };

    net.zero_grad();
    let mut losses = LossValues::default();
    let mut correct = 0;
    for shard in &shards {
        for (var, grad) in net.variables_mut().zip(&shard.grads) {
            for (d, &s) in var.grad.data_mut().iter_mut().zip(grad.data()) {
                *d += s;
            }
        }
        losses.total += shard.losses.total;
        losses.cross_entropy += shard.losses.cross_entropy;
        losses.weight_decay += shard.losses.weight_decay;
        losses.threshold += shard.losses.threshold;
        correct += shard.correct;
    }
    Ok((losses, correct))
}

/// Fraction of samples whose arg-max logit matches the label.
pub fn accuracy(net: &Network<f32>, data: &Dataset, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (images, labels) = data.batch(chunk)?;
        let predicted = net.logits(&images)?.argmax_rows();
        correct += predicted.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Optional per-epoch evaluation and progress callback for [`fit`].
#[derive(Default)]
pub struct FitOptions<'a> {
    pub eval: Option<&'a Dataset>,
    #[allow(clippy::type_complexity)]
    pub on_epoch: Option<Box<dyn FnMut(&EpochRecord) + 'a>>,
}

/// Trains `net` in place for `cfg.epochs` epochs of seeded, shuffled
/// mini-batches.
pub fn fit(
    net: &mut Network<f32>,
    data: &Dataset,
    cfg: &TrainConfig,
    mut options: FitOptions<'_>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for layer in net.layers_mut() {
        if let Some(t) = layer.threshold.as_mut() {
            t.set_grad_scale(cfg.rho)?;
        }
    }
    let mut optimizer = Optimizer::new(cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::new(*cfg);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossValues::default();
        let mut correct = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (images, labels) = data.batch(chunk)?;
            let (losses, hits) = batch_gradients(net, &images, &labels, cfg).map_err(|e| match e {
                Error::NonFinite { op } => Error::Divergence {
                    epoch,
                    batch: b,
                    detail: format!("non-finite values in {op}"),
                },
                other => other,
            })?;
            if !losses.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    detail: format!("loss became {}", losses.total),
                });
            }
            step(net, &mut optimizer);
            let w = chunk.len() as f64 / data.len() as f64;
            sums.total += w * losses.total;
            sums.cross_entropy += w * losses.cross_entropy;
            sums.weight_decay += w * losses.weight_decay;
            sums.threshold += w * losses.threshold;
            correct += hits;
        }
        let eval_accuracy = match options.eval {
            Some(eval) => Some(accuracy(net, eval, 1000)?),
            None => None,
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: sums.total,
            cross_entropy: sums.cross_entropy,
            weight_decay: sums.weight_decay,
            threshold_loss: sums.threshold,
            train_accuracy: correct as f64 / data.len() as f64,
            eval_accuracy,
            thresholds: net.thresholds(),
            live_fraction: export::live_fractions(net, cfg.gamma),
        };
        if let Some(cb) = options.on_epoch.as_mut() {
            cb(&record);
        }
        report.epochs.push(record);
    }
    Ok(report)
}

/// Trains a sibling network from a fresh Glorot initialization.
pub fn train(spec: &NetworkSpec, data: &Dataset, cfg: &TrainConfig) -> Result<(Network<f32>, TrainReport)> {
    train_with(spec, data, cfg, FitOptions::default())
}

pub fn train_with(
    spec: &NetworkSpec,
    data: &Dataset,
    cfg: &TrainConfig,
    options: FitOptions<'_>,
) -> Result<(Network<f32>, TrainReport)> {
    cfg.validate()?;
    let params = init_weights(spec, cfg.seed);
    let mut net = Network::sibling(spec.clone(), params, cfg.alpha, cfg.p_init)?;
    let report = fit(&mut net, data, cfg, options)?;
    Ok((net, report))
}

/// Trains the unwrapped reference network with the same budget; only the
/// cross-entropy and weight decay terms apply.
pub fn train_baseline(
    spec: &NetworkSpec,
    data: &Dataset,
    cfg: &TrainConfig,
    options: FitOptions<'_>,
) -> Result<(Network<f32>, TrainReport)> {
    cfg.validate()?;
    let mut net = Network::new(spec.clone(), init_weights(spec, cfg.seed))?;
    let report = fit(&mut net, data, cfg, options)?;
    Ok((net, report))
}
