use crate::autodiff::conv::{self, ConvGeometry, PoolGeometry};
use crate::error::{Error, Result};
use crate::pruning_math::Kernel;
use crate::tensor::{gemm, MatRef, Real, Tensor};

/// Trainable (or constant) tensor living outside any graph.
///
/// `grad_scale` multiplies the learning rate the optimizer applies to this
/// variable; thresholds use it to train slower than weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Variable<T: Real = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub requires_grad: bool,
    grad_scale: f64,
}

impl<T: Real> Variable<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Variable {
            value,
            grad,
            requires_grad: true,
            grad_scale: 1.0,
        }
    }

    pub fn constant(value: Tensor<T>) -> Self {
        Variable {
            requires_grad: false,
            ..Variable::new(value)
        }
    }

    pub fn with_grad_scale(mut self, scale: f64) -> Result<Self> {
        self.set_grad_scale(scale)?;
        Ok(self)
    }

    pub fn set_grad_scale(&mut self, scale: f64) -> Result<()> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Config(format!("grad_scale must be positive, got {scale}")));
        }
        self.grad_scale = scale;
        Ok(())
    }

    pub fn grad_scale(&self) -> f64 {
        self.grad_scale
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(T::zero());
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

pub(crate) enum Op<T> {
    Leaf,
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    Linear {
        x: NodeId,
        w: NodeId,
    },
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        geom: ConvGeometry,
        cols: Vec<T>,
    },
    MaxPool2d {
        input: NodeId,
        argmax: Vec<u32>,
    },
    Relu {
        input: NodeId,
    },
    BiasAdd {
        input: NodeId,
        bias: NodeId,
    },
    Reshape {
        input: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        input: NodeId,
        factor: T,
    },
    WeightedSum {
        input: NodeId,
        weights: Vec<T>,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
    SumSquares {
        inputs: Vec<NodeId>,
    },
    ThetaMap {
        weights: NodeId,
        thresholds: NodeId,
        dx: Vec<T>,
        dt: Vec<T>,
    },
    MappedL1 {
        thresholds: NodeId,
        group_dt: Vec<f64>,
    },
}

struct Node<T: Real> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Record of executed operations for one forward/backward pass.
///
/// Nodes are appended in execution order; [`Graph::backward`] walks them in
/// exact reverse, so gradient accumulation order is fixed.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, deps: &[NodeId]) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = deps.iter().any(|d| self.nodes[d.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Result<NodeId> {
        self.leaf(value, false)
    }

    /// Copies a variable's value into the graph.
    pub fn param(&mut self, var: &Variable<T>) -> Result<NodeId> {
        self.leaf(var.value.clone(), var.requires_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient populated by [`Graph::backward`], if any flowed to `id`.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Gradient of `id`, or zeros when nothing reached it.
    pub fn grad_or_zeros(&self, id: NodeId) -> Tensor<T> {
        self.grad(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(id).shape()))
    }

    /// Adds the gradient of `id` into `var.grad`.
    pub fn accumulate_grad(&self, id: NodeId, var: &mut Variable<T>) -> Result<()> {
        if var.grad.shape() != self.value(id).shape() {
            return Err(Error::Shape(format!(
                "variable gradient {:?} does not match node {:?}",
                var.grad.shape(),
                self.value(id).shape()
            )));
        }
        if let Some(g) = self.grad(id) {
            for (dst, &src) in var.grad.data_mut().iter_mut().zip(g.data()) {
                *dst = *dst + src;
            }
        }
        Ok(())
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (&[m, k], &[k2, n]) = (self.shape(a), self.shape(b)) else {
            return Err(Error::Shape(format!(
                "matmul expects matrices, got {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        };
        if k != k2 {
            return Err(Error::Shape(format!("matmul inner dimensions {k} and {k2}")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            MatRef::new(self.value(a).data(), m, k),
            MatRef::new(self.value(b).data(), k, n),
            T::zero(),
            &mut out,
        );
        self.push("matmul", Tensor::new([m, n], out)?, Op::MatMul { a, b }, &[a, b])
    }

    /// Fully connected map `x * w^T` with `x: [n, in]` and `w: [out, in]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (&[n, fan_in], &[fan_out, w_in]) = (self.shape(x), self.shape(w)) else {
            return Err(Error::Shape(format!(
                "linear expects [n, in] and [out, in], got {:?} and {:?}",
                self.shape(x),
                self.shape(w)
            )));
        };
        if fan_in != w_in {
            return Err(Error::Shape(format!(
                "linear input width {fan_in} does not match weight width {w_in}"
            )));
        }
        let mut out = vec![T::zero(); n * fan_out];
        gemm(
            MatRef::new(self.value(x).data(), n, fan_in),
            MatRef::transposed(self.value(w).data(), fan_in, fan_out),
            T::zero(),
            &mut out,
        );
        self.push("linear", Tensor::new([n, fan_out], out)?, Op::Linear { x, w }, &[x, w])
    }

    pub fn conv2d(&mut self, input: NodeId, kernels: NodeId, stride: usize, padding: usize) -> Result<NodeId> {
        let geom = ConvGeometry::new(self.shape(input), self.shape(kernels), stride, padding)?;
        let keep_cols = self.requires_grad(kernels);
        let (out, cols) = conv::conv2d_forward(&geom, self.value(input).data(), self.value(kernels).data(), keep_cols);
        let value = Tensor::new(geom.output_shape(), out)?;
        self.push(
            "conv2d",
            value,
            Op::Conv2d {
                input,
                kernels,
                geom,
                cols,
            },
            &[input, kernels],
        )
    }

    pub fn max_pool2d(&mut self, input: NodeId, size: usize, stride: usize) -> Result<NodeId> {
        let geom = PoolGeometry::new(self.shape(input), size, stride)?;
        let (out, argmax) = conv::max_pool_forward(&geom, self.value(input).data());
        let value = Tensor::new(geom.output_shape(), out)?;
        self.push("max_pool2d", value, Op::MaxPool2d { input, argmax }, &[input])
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let value = self.value(input).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push("relu", value, Op::Relu { input }, &[input])
    }

    /// Adds `bias[c]` along axis 1 of an `[N, C, ...]` input.
    pub fn bias_add(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId> {
        let shape = self.shape(input).to_vec();
        let channels = self.value(bias).len();
        if shape.len() < 2 || shape[1] != channels || self.shape(bias).len() != 1 {
            return Err(Error::Shape(format!(
                "bias {:?} does not broadcast over {shape:?}",
                self.shape(bias)
            )));
        }
        let inner: usize = shape[2..].iter().product();
        let mut value = self.value(input).clone();
        let b = self.value(bias).data().to_vec();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v = *v + b[(i / inner) % channels];
        }
        self.push("bias_add", value, Op::BiasAdd { input, bias }, &[input, bias])
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(input).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape { input }, &[input])
    }

    /// Collapses every axis after the first.
    pub fn flatten(&mut self, input: NodeId) -> Result<NodeId> {
        let shape = self.shape(input);
        let n = shape[0];
        let rest = shape[1..].iter().product();
        self.reshape(input, &[n, rest])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "add operands {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut value = self.value(a).clone();
        for (v, &o) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *v = *v + o;
        }
        self.push("add", value, Op::Add { a, b }, &[a, b])
    }

    pub fn scale(&mut self, input: NodeId, factor: T) -> Result<NodeId> {
        let value = self.value(input).map(|x| x * factor);
        self.push("scale", value, Op::Scale { input, factor }, &[input])
    }

    /// Scalar `sum(input * weights)`; reduces any output to a loss for checks.
    pub fn weighted_sum(&mut self, input: NodeId, weights: Vec<T>) -> Result<NodeId> {
        if weights.len() != self.value(input).len() {
            return Err(Error::Shape(format!(
                "weighted_sum weights have {} entries for {:?}",
                weights.len(),
                self.shape(input)
            )));
        }
        let total: f64 = self
            .value(input)
            .data()
            .iter()
            .zip(&weights)
            .map(|(&x, &w)| (x * w).as_f64())
            .sum();
        self.push(
            "weighted_sum",
            Tensor::scalar(T::from_f64(total)),
            Op::WeightedSum { input, weights },
            &[input],
        )
    }

    /// Mean softmax cross-entropy of `[N, K]` logits against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let &[n, k] = self.shape(logits) else {
            return Err(Error::Shape(format!(
                "cross-entropy expects [N, K] logits, got {:?}",
                self.shape(logits)
            )));
        };
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Label { label, classes: k });
        }
        let z = self.value(logits).data();
        let mut probs = vec![T::zero(); n * k];
        let mut total = 0.0f64;
        for (i, &label) in labels.iter().enumerate() {
            let row = &z[i * k..(i + 1) * k];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.as_f64()));
            let sum: f64 = row.iter().map(|&v| (v.as_f64() - max).exp()).sum();
            let log_sum = max + sum.ln();
            total += log_sum - row[label].as_f64();
            for (p, &v) in probs[i * k..(i + 1) * k].iter_mut().zip(row) {
                *p = T::from_f64((v.as_f64() - log_sum).exp());
            }
        }
        let value = Tensor::scalar(T::from_f64(total / n as f64));
        self.push(
            "softmax_cross_entropy",
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            &[logits],
        )
    }

    /// Entry-wise squared 2-norm summed over all inputs.
    pub fn l2_sum(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let total: f64 = inputs
            .iter()
            .flat_map(|&id| self.value(id).data().iter())
            .map(|&x| {
                let x = x.as_f64();
                x * x
            })
            .sum();
        self.push(
            "l2_sum",
            Tensor::scalar(T::from_f64(total)),
            Op::SumSquares {
                inputs: inputs.to_vec(),
            },
            inputs,
        )
    }

    fn group_layout(&self, weights: NodeId, thresholds: NodeId) -> Result<usize> {
        let groups = self.value(thresholds).len();
        let n = self.value(weights).len();
        if self.shape(thresholds).len() != 1 || n % groups != 0 {
            return Err(Error::Shape(format!(
                "thresholds {:?} do not partition weights {:?}",
                self.shape(thresholds),
                self.shape(weights)
            )));
        }
        if self.value(thresholds).data().iter().any(|&t| t < T::zero()) {
            return Err(Error::Domain("thresholds must be non-negative".into()));
        }
        Ok(n / groups)
    }

    /// Applies the pruning function element-wise.
    ///
    /// `thresholds` has one entry per group; groups are equal contiguous
    /// blocks of the weight buffer (one block per filter for `[F, ...]`
    /// kernels, the whole tensor for a single threshold).
    pub fn theta_map(&mut self, weights: NodeId, thresholds: NodeId, alpha: f64) -> Result<NodeId> {
        let block = self.group_layout(weights, thresholds)?;
        let t: Vec<f64> = self.value(thresholds).data().iter().map(|v| v.as_f64()).collect();
        let w = self.value(weights);
        let mut out = Vec::with_capacity(w.len());
        let mut dx = Vec::with_capacity(w.len());
        let mut dt = Vec::with_capacity(w.len());
        for (chunk, &tg) in w.data().chunks(block).zip(&t) {
            let kernel = Kernel::new(alpha, tg);
            for &x in chunk {
                let (v, gx, gt) = kernel.with_grads(x.as_f64());
                out.push(T::from_f64(v));
                dx.push(T::from_f64(gx));
                dt.push(T::from_f64(gt));
            }
        }
        let value = Tensor::new(w.shape(), out)?;
        self.push(
            "theta_map",
            value,
            Op::ThetaMap {
                weights,
                thresholds,
                dx,
                dt,
            },
            &[weights, thresholds],
        )
    }

    /// `sum |theta(w; t)|` whose gradient flows only into the thresholds; the
    /// weights never receive an adjoint from this node.
    pub fn l1_sum_mapped(&mut self, weights: NodeId, thresholds: NodeId, alpha: f64) -> Result<NodeId> {
        let block = self.group_layout(weights, thresholds)?;
        let t: Vec<f64> = self.value(thresholds).data().iter().map(|v| v.as_f64()).collect();
        let mut total = 0.0f64;
        let mut group_dt = vec![0.0f64; t.len()];
        for (g, chunk) in self.value(weights).data().chunks(block).enumerate() {
            let kernel = Kernel::new(alpha, t[g]);
            for &x in chunk {
                let (v, _, gt) = kernel.with_grads(x.as_f64());
                total += v.abs();
                if v != 0.0 {
                    group_dt[g] += v.signum() * gt;
                }
            }
        }
        self.push(
            "l1_sum_mapped",
            Tensor::scalar(T::from_f64(total)),
            Op::MappedL1 { thresholds, group_dt },
            &[thresholds],
        )
    }

    /// Same value and routing as [`Graph::l1_sum_mapped`], reusing the values
    /// and threshold derivatives already stored by a [`Graph::theta_map`] node.
    pub fn l1_of_theta_map(&mut self, mapped: NodeId) -> Result<NodeId> {
        let Op::ThetaMap { thresholds, dt, .. } = &self.nodes[mapped.0].op else {
            return Err(Error::Internal("l1_of_theta_map expects a theta_map node".into()));
        };
        let thresholds = *thresholds;
        let groups = self.value(thresholds).len();
        let values = self.value(mapped).data();
        let block = values.len() / groups;
        let mut total = 0.0f64;
        let mut group_dt = vec![0.0f64; groups];
        for (i, (&v, &d)) in values.iter().zip(dt).enumerate() {
            let v = v.as_f64();
            total += v.abs();
            if v != 0.0 {
                group_dt[i / block] += v.signum() * d.as_f64();
            }
        }
        self.push(
            "l1_sum_mapped",
            Tensor::scalar(T::from_f64(total)),
            Op::MappedL1 { thresholds, group_dt },
            &[thresholds],
        )
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let root = &mut self.nodes[loss.0];
        root.grad = Some(Tensor::ones(root.value.shape()));
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = node.grad.as_ref() else {
                continue;
            };
            propagate(&node.op, &node.value, grad.data(), before);
        }
        Ok(())
    }
}

fn grad_slot<T: Real>(nodes: &mut [Node<T>], id: NodeId) -> Option<&mut [T]> {
    let node = &mut nodes[id.0];
    if !node.requires_grad {
        return None;
    }
    let shape = node.value.shape().to_vec();
    Some(node.grad.get_or_insert_with(|| Tensor::zeros(shape)).data_mut())
}

fn add_into<T: Real>(dst: &mut [T], src: impl IntoIterator<Item = T>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn propagate<T: Real>(op: &Op<T>, value: &Tensor<T>, g: &[T], nodes: &mut [Node<T>]) {
    match op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
            let n = nodes[b.0].value.shape()[1];
            if nodes[a.0].requires_grad {
                let bv = nodes[b.0].value.data().to_vec();
                let ga = grad_slot(nodes, *a).unwrap();
                gemm(MatRef::new(g, m, n), MatRef::transposed(&bv, n, k), T::one(), ga);
            }
            if nodes[b.0].requires_grad {
                let av = nodes[a.0].value.data().to_vec();
                let gb = grad_slot(nodes, *b).unwrap();
                gemm(MatRef::transposed(&av, k, m), MatRef::new(g, m, n), T::one(), gb);
            }
        }
        Op::Linear { x, w } => {
            let (n, fan_in) = (nodes[x.0].value.shape()[0], nodes[x.0].value.shape()[1]);
            let fan_out = nodes[w.0].value.shape()[0];
            if nodes[x.0].requires_grad {
                let wv = nodes[w.0].value.data().to_vec();
                let gx = grad_slot(nodes, *x).unwrap();
                gemm(
                    MatRef::new(g, n, fan_out),
                    MatRef::new(&wv, fan_out, fan_in),
                    T::one(),
                    gx,
                );
            }
            if nodes[w.0].requires_grad {
                let xv = nodes[x.0].value.data().to_vec();
                let gw = grad_slot(nodes, *w).unwrap();
                gemm(
                    MatRef::transposed(g, fan_out, n),
                    MatRef::new(&xv, n, fan_in),
                    T::one(),
                    gw,
                );
            }
        }
        Op::Conv2d {
            input,
            kernels,
            geom,
            cols,
        } => {
            let kv = nodes[kernels.0].value.data().to_vec();
            if nodes[kernels.0].requires_grad {
                let gk = grad_slot(nodes, *kernels).unwrap();
                conv::conv2d_backward(geom, g, &kv, cols, None, Some(gk));
            }
            if let Some(gi) = grad_slot(nodes, *input) {
                conv::conv2d_backward(geom, g, &kv, cols, Some(gi), None);
            }
        }
        Op::MaxPool2d { input, argmax } => {
            if let Some(gi) = grad_slot(nodes, *input) {
                for (&idx, &d) in argmax.iter().zip(g) {
                    gi[idx as usize] = gi[idx as usize] + d;
                }
            }
        }
        Op::Relu { input } => {
            if nodes[input.0].requires_grad {
                let mask: Vec<bool> = nodes[input.0].value.data().iter().map(|&x| x > T::zero()).collect();
                let gi = grad_slot(nodes, *input).unwrap();
                add_into(gi, g.iter().zip(mask).map(|(&d, on)| if on { d } else { T::zero() }));
            }
        }
        Op::BiasAdd { input, bias } => {
            if let Some(gi) = grad_slot(nodes, *input) {
                add_into(gi, g.iter().copied());
            }
            if let Some(gb) = grad_slot(nodes, *bias) {
                let channels = gb.len();
                let inner = g.len() / (value.shape()[0] * channels);
                let mut acc = vec![0.0f64; channels];
                for (i, &d) in g.iter().enumerate() {
                    acc[(i / inner) % channels] += d.as_f64();
                }
                add_into(gb, acc.into_iter().map(T::from_f64));
            }
        }
        Op::Reshape { input } => {
            if let Some(gi) = grad_slot(nodes, *input) {
                add_into(gi, g.iter().copied());
            }
        }
        Op::Add { a, b } => {
            if let Some(ga) = grad_slot(nodes, *a) {
                add_into(ga, g.iter().copied());
            }
            if let Some(gb) = grad_slot(nodes, *b) {
                add_into(gb, g.iter().copied());
            }
        }
        Op::Scale { input, factor } => {
            if let Some(gi) = grad_slot(nodes, *input) {
                add_into(gi, g.iter().map(|&d| d * *factor));
            }
        }
        Op::WeightedSum { input, weights } => {
            if let Some(gi) = grad_slot(nodes, *input) {
                add_into(gi, weights.iter().map(|&w| w * g[0]));
            }
        }
        Op::SoftmaxCrossEntropy { logits, probs, labels } => {
            if let Some(gl) = grad_slot(nodes, *logits) {
                let n = labels.len();
                let k = probs.len() / n;
                let scale = g[0] / T::from_f64(n as f64);
                for (i, &label) in labels.iter().enumerate() {
                    for j in 0..k {
                        let onehot = if j == label { T::one() } else { T::zero() };
                        gl[i * k + j] = gl[i * k + j] + (probs[i * k + j] - onehot) * scale;
                    }
                }
            }
        }
        Op::SumSquares { inputs } => {
            let two = T::from_f64(2.0);
            for id in inputs {
                if nodes[id.0].requires_grad {
                    let xv = nodes[id.0].value.data().to_vec();
                    let gi = grad_slot(nodes, *id).unwrap();
                    add_into(gi, xv.into_iter().map(|x| two * x * g[0]));
                }
            }
        }
        Op::ThetaMap {
            weights,
            thresholds,
            dx,
            dt,
        } => {
            if let Some(gw) = grad_slot(nodes, *weights) {
                add_into(gw, g.iter().zip(dx).map(|(&d, &s)| d * s));
            }
            if let Some(gt) = grad_slot(nodes, *thresholds) {
                let block = g.len() / gt.len();
                for (group, slot) in gt.iter_mut().enumerate() {
                    let range = group * block..(group + 1) * block;
                    let acc: f64 = g[range.clone()]
                        .iter()
                        .zip(&dt[range])
                        .map(|(&d, &s)| d.as_f64() * s.as_f64())
                        .sum();
                    *slot = *slot + T::from_f64(acc);
                }
            }
        }
        Op::MappedL1 { thresholds, group_dt } => {
            if let Some(gt) = grad_slot(nodes, *thresholds) {
                let upstream = g[0].as_f64();
                add_into(gt, group_dt.iter().map(|&s| T::from_f64(s * upstream)));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::<f64>::new();
        let x = t64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let i = g.input(Tensor::eye(2)).unwrap();
        let xn = g.input(x.clone()).unwrap();
        let y = g.matmul(i, xn).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn matmul_sum_gradient_is_ones_times_b_transposed() {
        let mut g = Graph::<f64>::new();
        let a = Variable::new(t64(&[2, 3], &[1.0, -2.0, 0.5, 3.0, 0.0, 1.0]));
        let b = Variable::new(t64(&[3, 2], &[2.0, 1.0, -1.0, 4.0, 0.5, 0.25]));
        let an = g.param(&a).unwrap();
        let bn = g.param(&b).unwrap();
        let y = g.matmul(an, bn).unwrap();
        let loss = g.weighted_sum(y, vec![1.0; 4]).unwrap();
        g.backward(loss).unwrap();
        // ones(2x2) * b^T: each row holds the row sums of b.
        let expected = [3.0, 3.0, 0.75, 3.0, 3.0, 0.75];
        assert_eq!(g.grad(an).unwrap().data(), &expected);
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::<f32>::new();
        let a = g.input(Tensor::zeros([2, 3])).unwrap();
        let b = g.input(Tensor::zeros([2, 3])).unwrap();
        assert!(matches!(g.matmul(a, b), Err(Error::Shape(_))));
        assert!(g.linear(a, b).is_ok());
        let bias = g.input(Tensor::zeros([4])).unwrap();
        assert!(g.bias_add(a, bias).is_err());
        let logits = g.input(Tensor::zeros([2, 3])).unwrap();
        assert!(matches!(
            g.softmax_cross_entropy(logits, &[0, 3]),
            Err(Error::Label { label: 3, classes: 3 })
        ));
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn cross_entropy_analytic_values() {
        let mut g = Graph::<f64>::new();
        let logits = g.input(Tensor::zeros([3, 10])).unwrap();
        let loss = g.softmax_cross_entropy(logits, &[0, 4, 9]).unwrap();
        assert!((g.value(loss).data()[0] - 10f64.ln()).abs() < 1e-12);

        let mut z = vec![0.0; 10];
        z[7] = 1e4;
        let logits = g.input(t64(&[1, 10], &z)).unwrap();
        let loss = g.softmax_cross_entropy(logits, &[7]).unwrap();
        assert!(g.value(loss).data()[0].abs() < 1e-12);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = Variable::new(t64(&[4], &[-1.0, 0.0, 2.0, 0.0]));
        let xn = g.param(&x).unwrap();
        let y = g.relu(xn).unwrap();
        let loss = g.weighted_sum(y, vec![1.0; 4]).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(xn).unwrap().data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn single_node_gradient_is_one() {
        let mut g = Graph::<f64>::new();
        let x = g.param(&Variable::new(Tensor::scalar(3.5))).unwrap();
        g.backward(x).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn non_finite_is_reported() {
        let mut g = Graph::<f32>::new();
        assert!(matches!(
            g.input(Tensor::scalar(f32::NAN)),
            Err(Error::NonFinite { .. })
        ));
        let x = g.input(Tensor::scalar(f32::MAX)).unwrap();
        assert!(matches!(g.scale(x, 4.0), Err(Error::NonFinite { op: "scale" })));
    }

    #[test]
    fn l1_sum_mapped_never_reaches_weights() {
        let mut g = Graph::<f64>::new();
        let w = Variable::new(t64(&[2, 2], &[0.3, -0.01, 0.7, -2.0]));
        let t = Variable::new(t64(&[1], &[0.2]));
        let wn = g.param(&w).unwrap();
        let tn = g.param(&t).unwrap();
        let l = g.l1_sum_mapped(wn, tn, 100.0).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(wn).is_none());
        assert!(g.grad_or_zeros(wn).data().iter().all(|&v| v == 0.0));
        assert!(g.grad(tn).unwrap().data()[0] < 0.0);
    }

    #[test]
    fn l1_of_theta_map_matches_standalone() {
        let mut g = Graph::<f64>::new();
        let w = Variable::new(t64(&[2, 3], &[0.3, -0.01, 0.7, -2.0, 0.15, 0.0]));
        let t = Variable::new(t64(&[2], &[0.2, 0.1]));
        let wn = g.param(&w).unwrap();
        let tn = g.param(&t).unwrap();
        let a = g.l1_sum_mapped(wn, tn, 100.0).unwrap();
        let m = g.theta_map(wn, tn, 100.0).unwrap();
        let b = g.l1_of_theta_map(m).unwrap();
        assert_eq!(g.value(a).data(), g.value(b).data());
        let mut ga = Graph::<f64>::new();
        let (wa, ta) = (ga.param(&w).unwrap(), ga.param(&t).unwrap());
        let l = ga.l1_sum_mapped(wa, ta, 100.0).unwrap();
        ga.backward(l).unwrap();
        g.backward(b).unwrap();
        assert_eq!(ga.grad(ta).unwrap(), g.grad(tn).unwrap());
        assert!(g.grad(wn).is_none());
        assert!(g.l1_of_theta_map(wn).is_err());
    }

    #[test]
    fn zero_weights_give_zero_l1_and_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let wn = g.param(&Variable::new(Tensor::zeros([3, 3]))).unwrap();
        let tn = g.param(&Variable::new(t64(&[1], &[0.5]))).unwrap();
        let l = g.l1_sum_mapped(wn, tn, 100.0).unwrap();
        assert_eq!(g.value(l).data()[0], 0.0);
        g.backward(l).unwrap();
        assert_eq!(g.grad(tn).unwrap().data()[0], 0.0);
    }

    #[test]
    fn grouped_thresholds_must_partition() {
        let mut g = Graph::<f64>::new();
        let wn = g.param(&Variable::new(Tensor::zeros([3, 4]))).unwrap();
        let tn = g.param(&Variable::new(Tensor::zeros([5]))).unwrap();
        assert!(g.theta_map(wn, tn, 10.0).is_err());
        let neg = g.param(&Variable::new(t64(&[1], &[-0.1]))).unwrap();
        assert!(g.theta_map(wn, neg, 10.0).is_err());
    }
}
