//! Sequential architecture descriptions, Glorot initialization, and the
//! sibling construction that wraps every prunable weight group in the
//! pruning function with its own learnable threshold.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Variable};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        size: usize,
        stride: usize,
    },
    Flatten,
    Relu,
}

impl LayerKind {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Dense { .. } | LayerKind::Conv2d { .. })
    }
}

/// How many thresholds a prunable layer carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdGranularity {
    PerLayer,
    /// One threshold per convolution filter.
    PerFilter,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub prunable: bool,
    pub granularity: ThresholdGranularity,
}

impl LayerSpec {
    pub fn dense(name: &str, inputs: usize, outputs: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Dense { inputs, outputs },
            prunable: true,
            granularity: ThresholdGranularity::PerLayer,
        }
    }

    pub fn conv2d(name: &str, in_channels: usize, filters: usize, kernel: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv2d {
                in_channels,
                filters,
                kernel,
                stride: 1,
                padding: 0,
            },
            prunable: true,
            granularity: ThresholdGranularity::PerFilter,
        }
    }

    pub fn max_pool(name: &str, size: usize) -> Self {
        Self::plain(name, LayerKind::MaxPool { size, stride: size })
    }

    pub fn relu(name: &str) -> Self {
        Self::plain(name, LayerKind::Relu)
    }

    pub fn flatten(name: &str) -> Self {
        Self::plain(name, LayerKind::Flatten)
    }

    fn plain(name: &str, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
            prunable: false,
            granularity: ThresholdGranularity::PerLayer,
        }
    }

    /// Weight tensor shape: `[out, in]` for dense, `[F, C, k, k]` for conv.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match self.kind {
            LayerKind::Dense { inputs, outputs } => Some(vec![outputs, inputs]),
            LayerKind::Conv2d {
                in_channels,
                filters,
                kernel,
                ..
            } => Some(vec![filters, in_channels, kernel, kernel]),
            _ => None,
        }
    }

    pub fn bias_len(&self) -> Option<usize> {
        match self.kind {
            LayerKind::Dense { outputs, .. } => Some(outputs),
            LayerKind::Conv2d { filters, .. } => Some(filters),
            _ => None,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.weight_shape().map(|s| s.iter().product()).unwrap_or(0)
    }

    /// Number of thresholds this layer owns inside a sibling network.
    pub fn threshold_count(&self) -> usize {
        match (self.prunable, self.granularity, self.kind) {
            (false, ..) => 0,
            (true, ThresholdGranularity::PerFilter, LayerKind::Conv2d { filters, .. }) => filters,
            (true, ..) => 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.prunable && !self.kind.has_params() {
            return Err(Error::Config(format!(
                "layer {} is marked prunable but has no weights",
                self.name
            )));
        }
        if self.granularity == ThresholdGranularity::PerFilter && !matches!(self.kind, LayerKind::Conv2d { .. }) {
            return Err(Error::Config(format!(
                "layer {}: per-filter thresholds need a conv2d layer",
                self.name
            )));
        }
        Ok(())
    }

    /// Per-sample output shape for a per-sample input shape.
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = || {
            Error::Shape(format!(
                "layer {} ({:?}) cannot take input {input:?}",
                self.name, self.kind
            ))
        };
        match self.kind {
            LayerKind::Dense { inputs, outputs } => match input {
                [n] if *n == inputs => Ok(vec![outputs]),
                _ => Err(mismatch()),
            },
            LayerKind::Conv2d {
                in_channels,
                filters,
                kernel,
                stride,
                padding,
            } => match *input {
                [c, h, w]
                    if c == in_channels && h + 2 * padding >= kernel && w + 2 * padding >= kernel && stride > 0 =>
                {
                    Ok(vec![
                        filters,
                        (h + 2 * padding - kernel) / stride + 1,
                        (w + 2 * padding - kernel) / stride + 1,
                    ])
                }
                _ => Err(mismatch()),
            },
            LayerKind::MaxPool { size, stride } => match *input {
                [c, h, w] if size > 0 && stride > 0 && h >= size && w >= size => {
                    Ok(vec![c, (h - size) / stride + 1, (w - size) / stride + 1])
                }
                _ => Err(mismatch()),
            },
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            LayerKind::Relu => Ok(input.to_vec()),
        }
    }
}

/// A sequential network: per-sample input shape, layers, class count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub arch: String,
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(arch: &str, input_shape: Vec<usize>, classes: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = NetworkSpec {
            arch: arch.into(),
            input_shape,
            classes,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Config(format!("bad input shape {:?}", self.input_shape)));
        }
        for layer in &self.layers {
            layer.validate()?;
        }
        let out = self.output_shape()?;
        if out != [self.classes] {
            return Err(Error::Shape(format!(
                "network emits {out:?}, expected [{}] logits",
                self.classes
            )));
        }
        Ok(())
    }

    /// Per-sample output shape after composing every layer.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        self.layers
            .iter()
            .try_fold(self.input_shape.clone(), |shape, layer| layer.output_shape(&shape))
    }

    /// Per-sample input shape of every layer.
    pub fn layer_inputs(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            let next = layer.output_shape(&shape)?;
            shapes.push(std::mem::replace(&mut shape, next));
        }
        Ok(shapes)
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Indices of layers that own weights and biases, in order.
    pub fn param_layers(&self) -> impl Iterator<Item = (usize, &LayerSpec)> {
        self.layers.iter().enumerate().filter(|(_, l)| l.kind.has_params())
    }

    /// Weights excluding biases.
    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::weight_count).sum()
    }

    /// Weights plus biases.
    pub fn param_count(&self) -> usize {
        self.weight_count() + self.layers.iter().filter_map(LayerSpec::bias_len).sum::<usize>()
    }

    pub fn threshold_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::threshold_count).sum()
    }

    /// LeNet-300-100: dense 784-300-100-10 with ReLU between layers.
    pub fn lenet300() -> Self {
        NetworkSpec::new(
            "lenet300",
            vec![784],
            10,
            vec![
                LayerSpec::dense("fc1", 784, 300),
                LayerSpec::relu("relu1"),
                LayerSpec::dense("fc2", 300, 100),
                LayerSpec::relu("relu2"),
                LayerSpec::dense("fc3", 100, 10),
            ],
        )
        .expect("lenet300 spec is valid")
    }

    /// Small LeNet-5 style network: two 5x5 conv layers (20 and 50 filters,
    /// per-filter thresholds) each followed by 2x2 max pooling, then dense
    /// 800-500-10.
    pub fn lenet5_small() -> Self {
        NetworkSpec::new(
            "lenet5s",
            vec![1, 28, 28],
            10,
            vec![
                LayerSpec::conv2d("conv1", 1, 20, 5),
                LayerSpec::relu("relu1"),
                LayerSpec::max_pool("pool1", 2),
                LayerSpec::conv2d("conv2", 20, 50, 5),
                LayerSpec::relu("relu2"),
                LayerSpec::max_pool("pool2", 2),
                LayerSpec::flatten("flatten"),
                LayerSpec::dense("fc3", 800, 500),
                LayerSpec::relu("relu3"),
                LayerSpec::dense("fc4", 500, 10),
            ],
        )
        .expect("lenet5s spec is valid")
    }

    pub fn by_name(arch: &str) -> Result<Self> {
        match arch {
            "lenet300" => Ok(Self::lenet300()),
            "lenet5s" => Ok(Self::lenet5_small()),
            other => Err(Error::Config(format!(
                "unknown architecture {other:?} (expected lenet300 or lenet5s)"
            ))),
        }
    }
}

pub fn build_lenet300() -> NetworkSpec {
    NetworkSpec::lenet300()
}

pub fn build_lenet5_small() -> NetworkSpec {
    NetworkSpec::lenet5_small()
}

/// Weight and bias of one parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T: Real = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Glorot-uniform weights and zero biases for every parameterized layer.
pub fn init_weights(spec: &NetworkSpec, seed: u64) -> Vec<LayerParams<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    spec.param_layers()
        .map(|(_, layer)| {
            let shape = layer.weight_shape().expect("param layer");
            let receptive: usize = shape[2..].iter().product();
            let fan_in = shape[1] * receptive;
            let fan_out = shape[0] * receptive;
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
            let weight = Tensor::from_fn(shape, |_| rng.random_range(-limit..limit));
            let bias = Tensor::zeros([layer.bias_len().expect("param layer")]);
            LayerParams { weight, bias }
        })
        .collect()
}

/// Nearest-rank `p`-quantile: the smallest value with at least a fraction `p`
/// of the data at or below it. `p = 0` yields 0.
pub fn nearest_rank_quantile(values: &[f64], p: f64) -> f64 {
    if p <= 0.0 || values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Trainable tensors of one parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayer<T: Real = f32> {
    /// Index into [`NetworkSpec::layers`].
    pub layer: usize,
    pub weight: Variable<T>,
    pub bias: Variable<T>,
    /// Thresholds in sibling networks; `None` for unwrapped layers.
    pub threshold: Option<Variable<T>>,
}

/// Graph handles for one parameterized layer after a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ParamNodes {
    pub weight: NodeId,
    pub bias: NodeId,
    pub threshold: Option<NodeId>,
    /// The weight actually used by the layer: `theta(W; t)` or `W` itself.
    pub effective_weight: NodeId,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: NodeId,
    pub params: Vec<ParamNodes>,
}

/// A network with its parameters. When thresholds are present this is the
/// sibling network: each prunable weight `W` is used as `theta(W; t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Real = f32> {
    spec: NetworkSpec,
    layers: Vec<ParamLayer<T>>,
    alpha: f64,
}

impl<T: Real> Network<T> {
    /// Plain network without thresholds.
    pub fn new(spec: NetworkSpec, params: Vec<LayerParams<T>>) -> Result<Self> {
        Self::from_parts(spec, params, None, 1.0)
    }

    /// Wraps every prunable layer in the pruning function. Each threshold
    /// starts at the `p_init`-quantile of its group's absolute weights.
    pub fn sibling(spec: NetworkSpec, params: Vec<LayerParams<T>>, alpha: f64, p_init: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p_init) {
            return Err(Error::Config(format!("p_init must lie in [0, 1), got {p_init}")));
        }
        let thresholds = spec
            .param_layers()
            .zip(&params)
            .map(|((_, layer), p)| {
                let groups = layer.threshold_count();
                if groups == 0 {
                    return Vec::new();
                }
                let block = p.weight.len() / groups;
                p.weight
                    .data()
                    .chunks(block)
                    .map(|chunk| {
                        let mags: Vec<f64> = chunk.iter().map(|w| w.as_f64().abs()).collect();
                        nearest_rank_quantile(&mags, p_init)
                    })
                    .collect()
            })
            .collect();
        Self::from_parts(spec, params, Some(thresholds), alpha)
    }

    /// Assembles a network from stored parts. `thresholds` holds one list per
    /// parameterized layer (empty for layers that are not prunable).
    pub fn from_parts(
        spec: NetworkSpec,
        params: Vec<LayerParams<T>>,
        thresholds: Option<Vec<Vec<f64>>>,
        alpha: f64,
    ) -> Result<Self> {
        spec.validate()?;
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
        }
        let param_layers: Vec<(usize, &LayerSpec)> = spec.param_layers().collect();
        if params.len() != param_layers.len() {
            return Err(Error::Shape(format!(
                "{} parameter sets for {} parameterized layers",
                params.len(),
                param_layers.len()
            )));
        }
        if let Some(th) = &thresholds {
            if th.len() != param_layers.len() {
                return Err(Error::Shape("threshold lists do not match layers".into()));
            }
        }
        let mut layers = Vec::with_capacity(params.len());
        for (i, ((index, layer), p)) in param_layers.into_iter().zip(params).enumerate() {
            let wshape = layer.weight_shape().expect("param layer");
            if p.weight.shape() != wshape.as_slice() || p.bias.shape() != [layer.bias_len().unwrap()] {
                return Err(Error::Shape(format!(
                    "layer {}: got weight {:?} / bias {:?}, expected {wshape:?} / [{}]",
                    layer.name,
                    p.weight.shape(),
                    p.bias.shape(),
                    layer.bias_len().unwrap()
                )));
            }
            let threshold = match &thresholds {
                Some(th) if layer.prunable => {
                    let values = &th[i];
                    if values.len() != layer.threshold_count() {
                        return Err(Error::Shape(format!(
                            "layer {} needs {} thresholds, got {}",
                            layer.name,
                            layer.threshold_count(),
                            values.len()
                        )));
                    }
                    if values.iter().any(|&t| !(t.is_finite() && t >= 0.0)) {
                        return Err(Error::Config(format!(
                            "layer {} has a negative or non-finite threshold",
                            layer.name
                        )));
                    }
                    let data = values.iter().map(|&t| T::from_f64(t)).collect();
                    Some(Variable::new(Tensor::new([values.len()], data)?))
                }
                _ => None,
            };
            layers.push(ParamLayer {
                layer: index,
                weight: Variable::new(p.weight),
                bias: Variable::new(p.bias),
                threshold,
            });
        }
        Ok(Network { spec, layers, alpha })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn is_sibling(&self) -> bool {
        self.layers.iter().any(|l| l.threshold.is_some())
    }

    pub fn layers(&self) -> &[ParamLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ParamLayer<T>] {
        &mut self.layers
    }

    /// Weight and bias values, cloned.
    pub fn params(&self) -> Vec<LayerParams<T>> {
        self.layers
            .iter()
            .map(|l| LayerParams {
                weight: l.weight.value.clone(),
                bias: l.bias.value.clone(),
            })
            .collect()
    }

    /// Thresholds per parameterized layer (empty for unwrapped layers).
    pub fn thresholds(&self) -> Vec<Vec<f64>> {
        self.layers
            .iter()
            .map(|l| {
                l.threshold
                    .as_ref()
                    .map(|t| t.value.data().iter().map(|v| v.as_f64()).collect())
                    .unwrap_or_default()
            })
            .collect()
    }

    pub fn threshold_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.threshold.as_ref())
            .map(|t| t.value.len())
            .sum()
    }

    pub fn variables_mut(&mut self) -> impl Iterator<Item = &mut Variable<T>> {
        self.layers.iter_mut().flat_map(|l| {
            [Some(&mut l.weight), Some(&mut l.bias), l.threshold.as_mut()]
                .into_iter()
                .flatten()
        })
    }

    pub fn zero_grad(&mut self) {
        for v in self.variables_mut() {
            v.zero_grad();
        }
    }

    /// Reshapes `[N, ...]` into `[N, input_shape...]`.
    fn shape_batch(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
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
        batch.clone().reshape(shape)
    }

    /// Records the forward pass on `g`. Gradients reach weights through
    /// `d theta / d x` and thresholds through `d theta / d t`.
    pub fn forward(&self, g: &mut Graph<T>, batch: &Tensor<T>) -> Result<ForwardPass> {
        let mut x = g.input(self.shape_batch(batch)?)?;
        let mut nodes = Vec::with_capacity(self.layers.len());
        let mut params = self.layers.iter();
        for layer in &self.spec.layers {
            x = match layer.kind {
                LayerKind::Dense { .. } | LayerKind::Conv2d { .. } => {
                    let p = params.next().expect("one ParamLayer per parameterized layer");
                    let weight = g.param(&p.weight)?;
                    let bias = g.param(&p.bias)?;
                    let (threshold, effective_weight) = match &p.threshold {
                        Some(t) => {
                            let tn = g.param(t)?;
                            (Some(tn), g.theta_map(weight, tn, self.alpha)?)
                        }
                        None => (None, weight),
                    };
                    nodes.push(ParamNodes {
                        weight,
                        bias,
                        threshold,
                        effective_weight,
                    });
                    let y = match layer.kind {
                        LayerKind::Conv2d { stride, padding, .. } => g.conv2d(x, effective_weight, stride, padding)?,
                        _ => g.linear(x, effective_weight)?,
                    };
                    g.bias_add(y, bias)?
                }
                LayerKind::MaxPool { size, stride } => g.max_pool2d(x, size, stride)?,
                LayerKind::Flatten => g.flatten(x)?,
                LayerKind::Relu => g.relu(x)?,
            };
        }
        Ok(ForwardPass {
            logits: x,
            params: nodes,
        })
    }

    /// Logits without recording anything for a backward pass.
    pub fn logits(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut frozen = self.clone();
        for v in frozen.variables_mut() {
            v.requires_grad = false;
        }
        let mut g = Graph::new();
        let pass = frozen.forward(&mut g, batch)?;
        Ok(g.value(pass.logits).clone())
    }

    /// Converts parameters to another element type.
    pub fn cast<U: Real>(&self) -> Network<U> {
        let cast_var = |v: &Variable<T>| {
            let mut out = Variable::new(v.value.cast());
            out.requires_grad = v.requires_grad;
            out.set_grad_scale(v.grad_scale()).expect("scale already validated");
            out
        };
        Network {
            spec: self.spec.clone(),
            alpha: self.alpha,
            layers: self
                .layers
                .iter()
                .map(|l| ParamLayer {
                    layer: l.layer,
                    weight: cast_var(&l.weight),
                    bias: cast_var(&l.bias),
                    threshold: l.threshold.as_ref().map(cast_var),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenet300_counts() {
        let spec = NetworkSpec::lenet300();
        let counts: Vec<usize> = spec
            .layers
            .iter()
            .map(LayerSpec::weight_count)
            .filter(|&c| c > 0)
            .collect();
        assert_eq!(counts, vec![235_200, 30_000, 1_000]);
        // 235K / 30K / 1K and 266K at the table's precision.
        let k: Vec<usize> = counts.iter().map(|c| (*c as f64 / 1e3).round() as usize).collect();
        assert_eq!(k, vec![235, 30, 1]);
        assert_eq!(spec.weight_count(), 266_200);
        assert_eq!(spec.param_count(), 266_610);
        assert_eq!(spec.param_count() / 1000, 266);
        assert_eq!(spec.output_shape().unwrap(), vec![10]);
        assert_eq!(spec.threshold_count(), 3);
    }

    #[test]
    fn lenet5_small_counts() {
        let spec = NetworkSpec::lenet5_small();
        let counts: Vec<usize> = spec
            .layers
            .iter()
            .map(LayerSpec::weight_count)
            .filter(|&c| c > 0)
            .collect();
        assert_eq!(counts, vec![500, 25_000, 400_000, 5_000]);
        assert_eq!(spec.weight_count() / 1000, 430);
        assert_eq!(spec.threshold_count(), 20 + 50 + 1 + 1);
    }

    #[test]
    fn spec_validation() {
        let bad_granularity = LayerSpec {
            granularity: ThresholdGranularity::PerFilter,
            ..LayerSpec::dense("fc", 4, 2)
        };
        assert!(NetworkSpec::new("x", vec![4], 2, vec![bad_granularity]).is_err());
        let bad_prunable = LayerSpec {
            prunable: true,
            ..LayerSpec::relu("r")
        };
        assert!(NetworkSpec::new("x", vec![2], 2, vec![bad_prunable]).is_err());
        assert!(NetworkSpec::new("x", vec![4], 3, vec![LayerSpec::dense("fc", 4, 2)]).is_err());
        assert!(NetworkSpec::new("x", vec![5], 2, vec![LayerSpec::dense("fc", 4, 2)]).is_err());
        assert!(NetworkSpec::by_name("alexnet").is_err());
    }

    #[test]
    fn init_is_seeded_with_zero_bias() {
        let spec = NetworkSpec::lenet300();
        let a = init_weights(&spec, 7);
        let b = init_weights(&spec, 7);
        let c = init_weights(&spec, 8);
        assert_eq!(a, b);
        assert_ne!(a[0].weight, c[0].weight);
        assert!(a.iter().all(|p| p.bias.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn glorot_variance() {
        let spec = NetworkSpec::lenet300();
        let params = init_weights(&spec, 1);
        let w = params[0].weight.data();
        let n = w.len() as f64;
        let mean = w.iter().map(|&x| x as f64).sum::<f64>() / n;
        let var = w.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expected = 2.0 / (784.0 + 300.0);
        assert!((var - expected).abs() / expected < 0.1, "{var} vs {expected}");
    }

    #[test]
    fn quantile_initialization() {
        let spec = NetworkSpec::new("toy", vec![10], 10, vec![LayerSpec::dense("fc", 10, 10)]).unwrap();
        let w: Vec<f32> = (1..=100)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 } * i as f32 / 100.0)
            .collect();
        let params = vec![LayerParams {
            weight: Tensor::new([10, 10], w.clone()).unwrap(),
            bias: Tensor::zeros([10]),
        }];
        let net = Network::sibling(spec.clone(), params.clone(), 100.0, 0.1).unwrap();
        let t = net.thresholds()[0][0];
        // Nearest rank: ceil(0.1 * 100) = 10th smallest magnitude.
        assert_eq!(t, 0.1f32 as f64);
        let at_or_below = w.iter().filter(|x| (x.abs() as f64) <= t).count();
        assert_eq!(at_or_below, 10);

        let zero = Network::sibling(spec.clone(), params.clone(), 100.0, 0.0).unwrap();
        assert_eq!(zero.thresholds(), vec![vec![0.0]]);
        assert!(Network::sibling(spec.clone(), params.clone(), 100.0, 1.0).is_err());
        assert!(Network::sibling(spec, params, 100.0, -0.1).is_err());
    }

    #[test]
    fn per_filter_threshold_count() {
        let spec = NetworkSpec::lenet5_small();
        let net = Network::sibling(spec.clone(), init_weights(&spec, 0), 100.0, 0.1).unwrap();
        let per_layer: Vec<usize> = net.thresholds().iter().map(Vec::len).collect();
        assert_eq!(per_layer, vec![20, 50, 1, 1]);
        assert_eq!(net.threshold_count(), spec.threshold_count());
    }

    #[test]
    fn quantile_edge_cases() {
        assert_eq!(nearest_rank_quantile(&[], 0.5), 0.0);
        assert_eq!(nearest_rank_quantile(&[3.0, 1.0, 2.0], 0.0), 0.0);
        assert_eq!(nearest_rank_quantile(&[3.0, 1.0, 2.0], 0.01), 1.0);
        assert_eq!(nearest_rank_quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert_eq!(nearest_rank_quantile(&[3.0, 1.0, 2.0], 0.99), 3.0);
    }
}
