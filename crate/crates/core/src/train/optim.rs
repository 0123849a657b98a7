use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{flatten, num_learnable, unflatten, Tensors};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr0: f64,
    /// Multiplicative decay applied every `step_epochs` epochs.
    pub gamma: f64,
    pub step_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr0: 0.0008,
            gamma: 0.5,
            step_epochs: 5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be finite and > 0");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.step_epochs == 0 {
            return bad("step_epochs must be >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be > 0");
        }
        Ok(())
    }
}

/// Step-decayed learning rate: `lr0 * gamma^floor(epoch / step_epochs)`.
pub fn lr_at(epoch: usize, cfg: &OptimizerConfig) -> f64 {
    cfg.lr0 * cfg.gamma.powi((epoch / cfg.step_epochs) as i32)
}

/// Adam over the learnable tensors of a [`Tensors`] tree, in visit order.
#[derive(Debug, Clone)]
pub struct Adam {
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new<T: Tensors + ?Sized>(params: &T) -> Self {
        let n = num_learnable(params);
        Self {
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step<T: Tensors + ?Sized>(
        &mut self,
        params: &mut T,
        grads: &T,
        lr: f64,
        cfg: &OptimizerConfig,
    ) {
        let g = flatten(grads);
        let mut p = flatten(params);
        assert_eq!(g.len(), self.m.len(), "optimizer built for another model");
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..p.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        unflatten(params, &p);
    }
}
