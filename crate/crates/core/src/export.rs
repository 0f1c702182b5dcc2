//! The pruned network: weights whose mapped magnitude `|theta(w; t)|` is
//! below a cutoff `gamma` are dropped, and survivors are recovered through
//! the inverse of the pruning function and stored row-compressed.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data_io::Dataset;
use crate::error::{Error, Result};
use crate::network::{LayerKind, LayerParams, Network, NetworkSpec};
use crate::pruning_math::{eval, theta_bar_unchecked, theta_inv, Kernel, PruneParams};
use crate::tensor::{Real, Tensor};

/// Inverse tolerance used at export; tight enough that survivors round back
/// to their exact `f32` value.
pub const EXPORT_INVERSE_TOL: f64 = 1e-12;

/// Where a model came from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_digest: u64,
    pub seed: u64,
}

/// Surviving weights of one layer in CSR form. Rows are output neurons for
/// dense layers and filters (flattened `[C, kh, kw]`) for convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLayer {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub row_offsets: Vec<u32>,
    pub col_indices: Vec<u32>,
    pub values: Vec<f32>,
    pub bias: Vec<f32>,
    /// Learned thresholds: one per layer or one per filter, empty if unwrapped.
    pub thresholds: Vec<f64>,
}

impl SparseLayer {
    /// Compresses a dense row-major matrix, keeping entries where `keep`
    /// returns a value (which must be non-zero).
    pub fn from_dense(
        name: &str,
        rows: usize,
        cols: usize,
        dense: &[f32],
        bias: Vec<f32>,
        thresholds: Vec<f64>,
        mut keep: impl FnMut(usize, usize, f32) -> Option<f32>,
    ) -> Result<Self> {
        if dense.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{name}: {} values for a {rows}x{cols} matrix",
                dense.len()
            )));
        }
        let mut row_offsets = Vec::with_capacity(rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for r in 0..rows {
            for c in 0..cols {
                if let Some(v) = keep(r, c, dense[r * cols + c]) {
                    col_indices.push(c as u32);
                    values.push(v);
                }
            }
            row_offsets.push(values.len() as u32);
        }
        let layer = SparseLayer {
            name: name.to_string(),
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
            bias,
            thresholds,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn total(&self) -> usize {
        self.rows * self.cols
    }

    /// Checks the CSR invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Shape(format!("{}: {msg}", self.name)));
        if self.row_offsets.len() != self.rows + 1 || self.row_offsets[0] != 0 {
            return bad("row offsets must have rows + 1 entries starting at 0".into());
        }
        if self.row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return bad("row offsets decrease".into());
        }
        let nnz = self.values.len();
        if self.row_offsets[self.rows] as usize != nnz || self.col_indices.len() != nnz {
            return bad("offsets, indices and values disagree on nnz".into());
        }
        for r in 0..self.rows {
            let idx = &self.col_indices[self.row_offsets[r] as usize..self.row_offsets[r + 1] as usize];
            if idx.windows(2).any(|w| w[0] >= w[1]) || idx.last().is_some_and(|&c| c as usize >= self.cols) {
                return bad(format!("column indices of row {r} are unordered or out of range"));
            }
        }
        if self.values.iter().any(|&v| v == 0.0 || !v.is_finite()) {
            return bad("stored values must be finite and non-zero".into());
        }
        Ok(())
    }

    /// Row-major dense reconstruction with zeros for dropped entries.
    pub fn to_dense(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.total()];
        for r in 0..self.rows {
            for k in self.row_offsets[r] as usize..self.row_offsets[r + 1] as usize {
                out[r * self.cols + self.col_indices[k] as usize] = self.values[k];
            }
        }
        out
    }

    /// `x [n, cols] -> [n, rows]` plus bias, accumulated in `f64`.
    fn apply(&self, x: &[f32], n: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; n * self.rows];
        for s in 0..n {
            let xs = &x[s * self.cols..(s + 1) * self.cols];
            for r in 0..self.rows {
                let mut acc = self.bias[r] as f64;
                for k in self.row_offsets[r] as usize..self.row_offsets[r + 1] as usize {
                    acc += self.values[k] as f64 * xs[self.col_indices[k] as usize] as f64;
                }
                out[s * self.rows + r] = acc as f32;
            }
        }
        out
    }
}

/// The pruned network.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseModel {
    pub spec: NetworkSpec,
    /// One entry per parameterized layer, in order.
    pub layers: Vec<SparseLayer>,
    pub alpha: f64,
    pub gamma: f64,
    pub provenance: Provenance,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    Ok(())
}

/// Threshold of element `i` in a weight buffer of `len` entries split into
/// `thresholds.len()` contiguous groups; zero for unwrapped layers.
fn group_threshold(thresholds: &[f64], i: usize, len: usize) -> f64 {
    if thresholds.is_empty() {
        0.0
    } else {
        thresholds[i / (len / thresholds.len())]
    }
}

/// Whether a weight survives the cutoff: `|theta(w; t)| >= gamma`.
pub fn survives(w: f64, alpha: f64, t: f64, gamma: f64) -> bool {
    theta_bar_unchecked(eval(w, alpha, t), gamma) != 0.0
}

/// Fraction of each parameterized layer's weights that survive `gamma`.
pub fn live_fractions<T: Real>(net: &Network<T>, gamma: f64) -> Vec<f64> {
    net.layers()
        .iter()
        .zip(net.thresholds())
        .map(|(layer, thresholds)| {
            let data = layer.weight.value.data();
            let block = data.len() / thresholds.len().max(1);
            let live: usize = data
                .chunks(block.max(1))
                .enumerate()
                .map(|(g, chunk)| {
                    let t = group_threshold(&thresholds, g * block, data.len());
                    let kernel = Kernel::new(net.alpha(), t);
                    chunk
                        .iter()
                        .filter(|w| theta_bar_unchecked(kernel.value(w.as_f64()), gamma) != 0.0)
                        .count()
                })
                .sum();
            live as f64 / data.len() as f64
        })
        .collect()
}

/// Builds the pruned network: each weight `w` maps to `y = theta(w; t)`, is
/// cut with the dead-zone map at `gamma`, and survivors are stored as
/// `theta_inv(y)`, which recovers `w`.
pub fn prune(net: &Network<f32>, gamma: f64) -> Result<SparseModel> {
    check_gamma(gamma)?;
    let alpha = net.alpha();
    let spec = net.spec().clone();
    let mut layers = Vec::with_capacity(net.layers().len());
    for ((_, layer_spec), (layer, thresholds)) in spec.param_layers().zip(net.layers().iter().zip(net.thresholds())) {
        let shape = layer.weight.value.shape();
        let rows = shape[0];
        let cols = layer.weight.value.len() / rows;
        let len = rows * cols;
        let mut failure = None;
        let sparse = SparseLayer::from_dense(
            &layer_spec.name,
            rows,
            cols,
            layer.weight.value.data(),
            layer.bias.value.data().to_vec(),
            thresholds.clone(),
            |r, c, w| {
                let t = group_threshold(&thresholds, r * cols + c, len);
                let y = theta_bar_unchecked(eval(w as f64, alpha, t), gamma);
                if y == 0.0 {
                    return None;
                }
                match PruneParams::new(alpha, t).and_then(|p| theta_inv(y, p, EXPORT_INVERSE_TOL)) {
                    Ok(x) => Some(x as f32),
                    Err(e) => {
                        failure.get_or_insert(e);
                        None
                    }
                }
            },
        );
        if let Some(e) = failure {
            return Err(e);
        }
        layers.push(sparse?);
    }
    Ok(SparseModel {
        spec,
        layers,
        alpha,
        gamma,
        provenance: Provenance::default(),
    })
}

/// Per-layer pruning statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub name: String,
    pub total: usize,
    pub kept: usize,
    /// `100 * (1 - kept / total)`.
    pub pruning_pct: f64,
    /// `total / kept`; infinite when nothing is kept.
    pub ratio: f64,
}

impl LayerStats {
    pub fn new(name: &str, total: usize, kept: usize) -> Self {
        LayerStats {
            name: name.to_string(),
            total,
            kept,
            pruning_pct: 100.0 * (1.0 - kept as f64 / total as f64),
            ratio: total as f64 / kept as f64,
        }
    }

    /// Compression factor rounded half-to-even; `None` when nothing is kept.
    pub fn factor(&self) -> Option<u64> {
        self.ratio.is_finite().then(|| self.ratio.round_ties_even() as u64)
    }

    fn factor_label(&self) -> String {
        self.factor().map_or_else(|| "inf".to_string(), |f| format!("{f}x"))
    }
}

/// Statistics for every layer followed by the whole-network total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneStats {
    pub layers: Vec<LayerStats>,
    pub total: LayerStats,
}

impl PruneStats {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>10} {:>10} {:>9} {:>8}",
            "layer", "weights", "kept", "pruned", "factor"
        );
        for s in self.layers.iter().chain([&self.total]) {
            let _ = writeln!(
                out,
                "{:<8} {:>10} {:>10} {:>9} {:>8}",
                s.name,
                s.total,
                s.kept,
                format!("{:.1}%", s.pruning_pct),
                s.factor_label()
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,weights,kept,pruning_pct,factor,ratio\n");
        for s in self.layers.iter().chain([&self.total]) {
            let factor = s.factor().map_or_else(|| "inf".to_string(), |f| f.to_string());
            let _ = writeln!(
                out,
                "{},{},{},{:.1},{},{}",
                s.name, s.total, s.kept, s.pruning_pct, factor, s.ratio
            );
        }
        out
    }
}

impl SparseModel {
    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn kept(&self) -> usize {
        self.layers.iter().map(SparseLayer::nnz).sum()
    }

    pub fn total_weights(&self) -> usize {
        self.layers.iter().map(SparseLayer::total).sum()
    }

    pub fn stats(&self) -> PruneStats {
        PruneStats {
            layers: self
                .layers
                .iter()
                .map(|l| LayerStats::new(&l.name, l.total(), l.nnz()))
                .collect(),
            total: LayerStats::new("total", self.total_weights(), self.kept()),
        }
    }

    /// Checks layer shapes against the spec and every CSR invariant.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let param_layers: Vec<_> = self.spec.param_layers().collect();
        if param_layers.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "spec has {} parameterized layers, model stores {}",
                param_layers.len(),
                self.layers.len()
            )));
        }
        for ((_, spec), layer) in param_layers.iter().zip(&self.layers) {
            let shape = spec.weight_shape().expect("param layer");
            let rows = shape[0];
            let cols: usize = shape[1..].iter().product();
            if layer.rows != rows || layer.cols != cols || Some(layer.bias.len()) != spec.bias_len() {
                return Err(Error::Shape(format!("layer {} does not match its spec", layer.name)));
            }
            if !layer.thresholds.is_empty() && layer.thresholds.len() != spec.threshold_count() {
                return Err(Error::Shape(format!(
                    "layer {} has a wrong threshold count",
                    layer.name
                )));
            }
            layer.validate()?;
        }
        Ok(())
    }

    /// Plain dense network holding the surviving weights and zeros elsewhere.
    pub fn densify(&self) -> Result<Network<f32>> {
        let params = self
            .spec
            .param_layers()
            .zip(&self.layers)
            .map(|((_, spec), layer)| {
                Ok(LayerParams {
                    weight: Tensor::new(spec.weight_shape().expect("param layer"), layer.to_dense())?,
                    bias: Tensor::new([layer.bias.len()], layer.bias.clone())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(self.spec.clone(), params)
    }

    /// Logits of the pruned network. Dense layers multiply in CSR form;
    /// convolutions rebuild each filter's kernel.
    pub fn forward(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
        let n = batch.shape()[0];
        if batch.len() != n * self.spec.input_len() {
            return Err(Error::Shape(format!(
                "batch {:?} does not match network input {:?}",
                batch.shape(),
                self.spec.input_shape
            )));
        }
        let mut shape = vec![n];
        shape.extend_from_slice(&self.spec.input_shape);
        let mut x = batch.clone().reshape(shape)?;
        let mut params = self.layers.iter();
        for layer in &self.spec.layers {
            x = match layer.kind {
                LayerKind::Dense { .. } => {
                    let p = params.next().expect("param layer");
                    if x.len() != n * p.cols {
                        return Err(Error::Shape(format!("{} expects {} inputs", p.name, p.cols)));
                    }
                    Tensor::new([n, p.rows], p.apply(x.data(), n))?
                }
                LayerKind::Conv2d { stride, padding, .. } => {
                    let p = params.next().expect("param layer");
                    let kernel = Tensor::new(layer.weight_shape().expect("param layer"), p.to_dense())?;
                    let mut g = Graph::new();
                    let input = g.input(x)?;
                    let k = g.input(kernel)?;
                    let b = g.input(Tensor::new([p.bias.len()], p.bias.clone())?)?;
                    let y = g.conv2d(input, k, stride, padding)?;
                    let y = g.bias_add(y, b)?;
                    g.value(y).clone()
                }
                LayerKind::MaxPool { size, stride } => {
                    let mut g = Graph::new();
                    let input = g.input(x)?;
                    let y = g.max_pool2d(input, size, stride)?;
                    g.value(y).clone()
                }
                LayerKind::Flatten => {
                    let per = x.len() / n;
                    x.reshape([n, per])?
                }
                LayerKind::Relu => x.map(|v| v.max(0.0)),
            };
        }
        Ok(x)
    }

    /// Top-1 accuracy on `data`.
    pub fn accuracy(&self, data: &Dataset, batch_size: usize) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let indices: Vec<usize> = (0..data.len()).collect();
        let mut correct = 0;
        for chunk in indices.chunks(batch_size.max(1)) {
            let (images, labels) = data.batch(chunk)?;
            let predicted = self.forward(&images)?.argmax_rows();
            correct += predicted.iter().zip(&labels).filter(|(p, l)| p == l).count();
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

/// Accuracy of a model together with its top-1 error change against a
/// reference, in percentage points (positive means more errors).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub error_pct: f64,
    pub delta_pct: Option<f64>,
}

impl Evaluation {
    pub fn new(accuracy: f64, baseline_accuracy: Option<f64>) -> Self {
        let error_pct = 100.0 * (1.0 - accuracy);
        Evaluation {
            accuracy,
            error_pct,
            delta_pct: baseline_accuracy.map(|b| error_pct - 100.0 * (1.0 - b)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::Split;
    use crate::network::{init_weights, LayerSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_spec() -> NetworkSpec {
        NetworkSpec::new(
            "toy",
            vec![12],
            4,
            vec![
                LayerSpec::dense("fc1", 12, 8),
                LayerSpec::relu("r1"),
                LayerSpec::dense("fc2", 8, 4),
            ],
        )
        .unwrap()
    }

    fn toy_conv_spec() -> NetworkSpec {
        NetworkSpec::new(
            "toyconv",
            vec![1, 8, 8],
            3,
            vec![
                LayerSpec::conv2d("c1", 1, 3, 3),
                LayerSpec::relu("r1"),
                LayerSpec::max_pool("p1", 2),
                LayerSpec::flatten("f"),
                LayerSpec::dense("fc", 27, 3),
            ],
        )
        .unwrap()
    }

    fn random_batch(n: usize, len: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn([n, len], |_| rng.random_range(-1.0..1.0f32))
    }

    fn random_params(spec: &NetworkSpec, seed: u64) -> Vec<LayerParams<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_weights(spec, seed)
            .into_iter()
            .map(|p| LayerParams {
                bias: Tensor::from_fn(p.bias.shape(), |_| rng.random_range(-0.1..0.1f32)),
                weight: p.weight,
            })
            .collect()
    }

    fn close(a: &Tensor<f32>, b: &Tensor<f32>, tol: f32) -> bool {
        a.shape() == b.shape()
            && a.data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| (x - y).abs() <= tol * y.abs().max(1.0))
    }

    #[test]
    fn zero_threshold_keeps_everything_exactly() {
        let spec = toy_spec();
        let params = random_params(&spec, 3);
        let net = Network::sibling(spec, params.clone(), 100.0, 0.0).unwrap();
        let min = params
            .iter()
            .flat_map(|p| p.weight.data().iter())
            .fold(f32::INFINITY, |m, w| m.min(w.abs()));
        let model = prune(&net, min as f64 * 0.5).unwrap();
        assert_eq!(model.kept(), model.total_weights());
        for (layer, p) in model.layers.iter().zip(&params) {
            assert_eq!(layer.to_dense(), p.weight.data());
        }
        let stats = model.stats();
        assert_eq!(stats.total.pruning_pct, 0.0);
        assert_eq!(stats.total.factor(), Some(1));
    }

    #[test]
    fn gamma_must_be_positive() {
        let spec = toy_spec();
        let net = Network::new(spec.clone(), init_weights(&spec, 0)).unwrap();
        assert!(prune(&net, 0.0).is_err());
        assert!(prune(&net, -1e-3).is_err());
    }

    #[test]
    fn boundary_weight_survives() {
        // With t = 0 the map is the identity, so |theta(w)| = gamma exactly.
        let spec = toy_spec();
        let mut params = init_weights(&spec, 1);
        params[0].weight.data_mut()[5] = 0.25;
        params[0].weight.data_mut()[6] = 0.249_999_99;
        let net = Network::from_parts(spec, params, Some(vec![vec![0.0], vec![0.0]]), 100.0).unwrap();
        let dense = prune(&net, 0.25).unwrap().layers[0].to_dense();
        assert_eq!(dense[5], 0.25);
        assert_eq!(dense[6], 0.0);
    }

    #[test]
    fn pipeline_matches_direct_filter() {
        let spec = toy_conv_spec();
        let params = random_params(&spec, 11);
        let mut net = Network::sibling(spec, params.clone(), 100.0, 0.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for layer in net.layers_mut() {
            for t in layer.threshold.as_mut().unwrap().value.data_mut() {
                *t *= rng.random_range(0.5..1.5f32);
            }
        }
        let gamma = 1e-2;
        let model = prune(&net, gamma).unwrap();
        for ((layer, p), thresholds) in model.layers.iter().zip(&params).zip(net.thresholds()) {
            let w = p.weight.data();
            let block = w.len() / thresholds.len();
            let oracle: Vec<f32> = w
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let t = thresholds[i / block];
                    if eval(x as f64, 100.0, t).abs() >= gamma {
                        x
                    } else {
                        0.0
                    }
                })
                .collect();
            let dense = layer.to_dense();
            for (a, b) in dense.iter().zip(&oracle) {
                assert_eq!(*a == 0.0, *b == 0.0);
                assert!((a - b).abs() as f64 <= 1e-8);
            }
        }
        assert!(model.kept() < model.total_weights());
    }

    #[test]
    fn larger_gamma_never_keeps_more() {
        let spec = toy_spec();
        let net = Network::sibling(spec.clone(), random_params(&spec, 4), 100.0, 0.3).unwrap();
        let mut last = usize::MAX;
        for gamma in [1e-4, 1e-3, 1e-2, 5e-2, 0.1, 0.3, 1.0] {
            let kept = prune(&net, gamma).unwrap().kept();
            assert!(kept <= last);
            last = kept;
        }
    }

    #[test]
    fn stats_arithmetic() {
        let s = LayerStats::new("fc1", 235_200, 12_500);
        assert_eq!(format!("{:.1}%", s.pruning_pct), "94.7%");
        assert_eq!(s.factor(), Some(19));
        let s = LayerStats::new("tiny", 10, 4);
        assert_eq!(s.pruning_pct, 60.0);
        assert_eq!(s.factor(), Some(2));
        assert_eq!(s.ratio, 2.5);
        let s = LayerStats::new("full", 10, 10);
        assert_eq!((s.pruning_pct, s.factor()), (0.0, Some(1)));
        assert_eq!(LayerStats::new("none", 10, 0).factor(), None);
    }

    #[test]
    fn stats_tables() {
        let model_stats = PruneStats {
            layers: vec![LayerStats::new("fc1", 235_200, 12_500)],
            total: LayerStats::new("total", 235_200, 12_500),
        };
        let text = model_stats.to_text();
        assert!(text.contains("94.7%") && text.contains("19x"));
        let csv = model_stats.to_csv();
        assert!(csv.lines().nth(1).unwrap().starts_with("fc1,235200,12500,94.7,19,"));
    }

    #[test]
    fn sparse_forward_matches_dense() {
        for spec in [toy_spec(), toy_conv_spec()] {
            let net = Network::sibling(spec.clone(), random_params(&spec, 8), 100.0, 0.5).unwrap();
            let model = prune(&net, 1e-2).unwrap();
            let dense = model.densify().unwrap();
            let batch = random_batch(100, spec.input_len(), 5);
            assert!(close(
                &model.forward(&batch).unwrap(),
                &dense.logits(&batch).unwrap(),
                1e-5
            ));
        }
    }

    #[test]
    fn unpruned_model_reproduces_base_network() {
        let spec = toy_conv_spec();
        let params = random_params(&spec, 6);
        let base = Network::new(spec.clone(), params).unwrap();
        let model = prune(&base, 1e-9).unwrap();
        assert_eq!(model.kept(), model.total_weights());
        let batch = random_batch(10, spec.input_len(), 1);
        assert!(close(
            &model.forward(&batch).unwrap(),
            &base.logits(&batch).unwrap(),
            1e-5
        ));
    }

    #[test]
    fn fully_pruned_layer_ignores_its_input() {
        let spec = toy_spec();
        let mut net = Network::sibling(spec.clone(), random_params(&spec, 9), 100.0, 0.0).unwrap();
        net.layers_mut()[0].threshold.as_mut().unwrap().value.data_mut()[0] = 100.0;
        let model = prune(&net, 1e-3).unwrap();
        assert_eq!(model.layers[0].nnz(), 0);
        let a = model.forward(&random_batch(3, 12, 1)).unwrap();
        let b = model.forward(&random_batch(3, 12, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn accuracy_extremes() {
        // fc2 sends the constant-one hidden unit to class = label.
        let spec = NetworkSpec::new("id", vec![4], 4, vec![LayerSpec::dense("fc", 4, 4)]).unwrap();
        let eye = Tensor::<f32>::eye(4);
        let perfect = Network::new(
            spec.clone(),
            vec![LayerParams {
                weight: eye.clone(),
                bias: Tensor::zeros([4]),
            }],
        )
        .unwrap();
        let data = Dataset::new(
            Tensor::new(
                [8, 4],
                (0..32).map(|i| if i % 4 == (i / 4) % 4 { 1.0 } else { 0.0 }).collect(),
            )
            .unwrap(),
            (0..8).map(|i| (i % 4) as u8).collect(),
            Split::Custom,
        )
        .unwrap();
        assert_eq!(prune(&perfect, 1e-3).unwrap().accuracy(&data, 3).unwrap(), 1.0);
        let constant = Network::new(
            spec,
            vec![LayerParams {
                weight: Tensor::zeros([4, 4]),
                bias: Tensor::new([4], vec![0.0, 0.0, 1.0, 0.0]).unwrap(),
            }],
        )
        .unwrap();
        assert_eq!(prune(&constant, 1e-3).unwrap().accuracy(&data, 8).unwrap(), 0.25);
        let e = Evaluation::new(0.97, Some(0.98));
        assert!((e.delta_pct.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn validate_rejects_broken_csr() {
        let spec = toy_spec();
        let net = Network::new(spec.clone(), init_weights(&spec, 0)).unwrap();
        let model = prune(&net, 1e-3).unwrap();
        model.validate().unwrap();
        let mut broken = model.clone();
        broken.layers[0].values[0] = 0.0;
        assert!(broken.validate().is_err());
        let mut broken = model.clone();
        broken.layers[1].col_indices.swap(0, 1);
        assert!(broken.validate().is_err());
        let mut broken = model;
        broken.layers[0].row_offsets[3] += 1;
        assert!(broken.validate().is_err());
    }

    #[test]
    fn live_fraction_agrees_with_prune() {
        let spec = toy_spec();
        let net = Network::sibling(spec.clone(), random_params(&spec, 2), 100.0, 0.5).unwrap();
        let model = prune(&net, 1e-2).unwrap();
        for (frac, layer) in live_fractions(&net, 1e-2).iter().zip(&model.layers) {
            assert_eq!(*frac, layer.nnz() as f64 / layer.total() as f64);
        }
    }
}
