use serde::{Deserialize, Serialize};

use crate::autodiff::Variable;
use crate::network::Network;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
    Sgd { lr: f64, momentum: f64 },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        OptimizerKind::Sgd { lr, momentum: 0.0 }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerKind::Adam { lr, .. } | OptimizerKind::Sgd { lr, .. } => lr,
        }
    }

    pub fn with_lr(self, lr: f64) -> Self {
        match self {
            OptimizerKind::Adam { beta1, beta2, eps, .. } => OptimizerKind::Adam { lr, beta1, beta2, eps },
            OptimizerKind::Sgd { momentum, .. } => OptimizerKind::Sgd { lr, momentum },
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Slot {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Optimizer with per-variable moment state that persists across steps.
///
/// A variable's `grad_scale` multiplies the final update (after the adaptive
/// normalization for Adam), so a scale of `rho` slows that variable by
/// exactly `rho` relative to an unscaled one.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    slots: Vec<Slot>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            slots: Vec::new(),
            steps: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every trainable variable in order.
    pub fn update<'a, T: Real>(&mut self, vars: impl IntoIterator<Item = &'a mut Variable<T>>) {
        self.steps += 1;
        let step = self.steps as i32;
        for (i, var) in vars.into_iter().enumerate() {
            if self.slots.len() <= i {
                self.slots.push(Slot::default());
            }
            if !var.requires_grad {
                continue;
            }
            let slot = &mut self.slots[i];
            let n = var.value.len();
            if slot.first.len() != n {
                slot.first = vec![0.0; n];
                slot.second = vec![0.0; n];
            }
            let scale = var.grad_scale();
            let grads = var.grad.data().to_vec();
            let values = var.value.data_mut();
            match self.kind {
                OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(step);
                    let c2 = 1.0 - beta2.powi(step);
                    for j in 0..n {
                        let g = grads[j].as_f64();
                        let m = beta1 * slot.first[j] + (1.0 - beta1) * g;
                        let v = beta2 * slot.second[j] + (1.0 - beta2) * g * g;
                        slot.first[j] = m;
                        slot.second[j] = v;
                        let update = lr * scale * (m / c1) / ((v / c2).sqrt() + eps);
                        values[j] = T::from_f64(values[j].as_f64() - update);
                    }
                }
                OptimizerKind::Sgd { lr, momentum } => {
                    for j in 0..n {
                        let velocity = momentum * slot.first[j] + grads[j].as_f64();
                        slot.first[j] = velocity;
                        values[j] = T::from_f64(values[j].as_f64() - lr * scale * velocity);
                    }
                }
            }
        }
    }
}

/// One optimizer step over a network followed by the threshold projection
/// `t <- max(t, 0)`.
pub fn step<T: Real>(net: &mut Network<T>, opt: &mut Optimizer) {
    opt.update(net.variables_mut());
    project_thresholds(net);
}

pub fn project_thresholds<T: Real>(net: &mut Network<T>) {
    for layer in net.layers_mut() {
        if let Some(t) = layer.threshold.as_mut() {
            for v in t.value.data_mut() {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
        }
    }
}
