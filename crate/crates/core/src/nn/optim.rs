//! RMSProp and Adam parameter updates with persistent per-parameter state.

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    RmsProp,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer '{other}' (expected rmsprop or adam)")),
        }
    }
}

/// RMSProp: decaying average of squared gradients scales the step.
/// cache = rho * cache + (1 - rho) * g^2; p -= lr * g / (sqrt(cache) + eps).
pub fn rmsprop_step(param: &mut [f64], grad: &[f64], cache: &mut [f64], lr: f64, rho: f64, eps: f64) {
    for ((p, &g), c) in param.iter_mut().zip(grad).zip(cache.iter_mut()) {
        *c = rho * *c + (1.0 - rho) * g * g;
        *p -= lr * g / (c.sqrt() + eps);
    }
}

/// Adam with bias correction: first and second moment estimates, each
/// corrected by 1 - beta^t, where t counts steps from 1.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for (((p, &g), mi), vi) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = beta1 * *mi + (1.0 - beta1) * g;
        *vi = beta2 * *vi + (1.0 - beta2) * g * g;
        let m_hat = *mi / bc1;
        let v_hat = *vi / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Stateful optimizer over a parameter list; slot i tracks the i-th
/// parameter tensor in declaration order.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub rho: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, param_sizes: &[usize]) -> Self {
        Optimizer {
            kind,
            lr,
            rho: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            step: 0,
            first: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Starts a new update step (advances the Adam bias-correction clock).
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates the parameter tracked by slot `i` with its gradient.
    /// Must be called after `begin_step` for the current step.
    pub fn apply_slot(&mut self, i: usize, param: &mut Tensor, grad: &Tensor) {
        assert!(i < self.first.len(), "optimizer slot {i} out of range");
        assert_eq!(param.len(), self.second[i].len(), "slot {i} size mismatch");
        match self.kind {
            OptimizerKind::RmsProp => rmsprop_step(
                param.data_mut(),
                grad.data(),
                &mut self.second[i],
                self.lr,
                self.rho,
                self.eps,
            ),
            OptimizerKind::Adam => adam_step(
                param.data_mut(),
                grad.data(),
                &mut self.first[i],
                &mut self.second[i],
                self.step,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
            ),
        }
    }

    /// Applies one whole update over matched parameter/gradient lists.
    pub fn apply(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len(), "params/grads length mismatch");
        assert_eq!(params.len(), self.first.len(), "optimizer slot mismatch");
        self.begin_step();
        for (i, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            self.apply_slot(i, param, grad);
        }
    }
}
