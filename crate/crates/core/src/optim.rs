//! Learning-rate schedule and the two optimizers.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub total_steps: u64,
    pub warmup_steps: u64,
}

impl ScheduleConfig {
    pub fn new(base_lr: f64, total_steps: u64, warmup_steps: u64) -> Result<Self> {
        if warmup_steps > total_steps {
            return Err(Error::Contract(format!(
                "warmup {warmup_steps} exceeds total steps {total_steps}"
            )));
        }
        Ok(Self {
            base_lr,
            total_steps,
            warmup_steps,
        })
    }

    /// Warmup given as a fraction of the total, rounded down.
    pub fn with_warmup_fraction(base_lr: f64, total_steps: u64, fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Contract(format!("warmup fraction {fraction} outside [0, 1]")));
        }
        Self::new(base_lr, total_steps, (fraction * total_steps as f64).floor() as u64)
    }
}

/// Linear ramp to `base_lr` over the warmup, then half-cosine down to 0.
/// Steps past the end clamp to the final value.
pub fn cosine_lr(step: u64, s: &ScheduleConfig) -> f64 {
    let step = step.min(s.total_steps);
    if step < s.warmup_steps {
        return s.base_lr * step as f64 / s.warmup_steps as f64;
    }
    let span = s.total_steps - s.warmup_steps;
    if span == 0 {
        return s.base_lr;
    }
    let progress = (step - s.warmup_steps) as f64 / span as f64;
    s.base_lr * 0.5 * (1.0 + (PI * progress).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adamw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn sgd(momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            momentum,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn adamw(weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::Adamw,
            momentum: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// Per-parameter moment buffers. SGD keeps one (velocity), AdamW two.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub cfg: OptimizerConfig,
    pub step: u64,
    pub buffers: Vec<Vec<Tensor>>,
}

impl OptimizerState {
    pub fn new(cfg: OptimizerConfig, store: &ParamStore) -> Self {
        let per = match cfg.kind {
            OptimizerKind::SgdMomentum => 1,
            OptimizerKind::Adamw => 2,
        };
        let buffers = store
            .iter()
            .map(|p| {
                (0..per)
                    .map(|_| Tensor::zeros(p.value.shape().to_vec()).expect("stored shapes are valid"))
                    .collect()
            })
            .collect();
        Self {
            cfg,
            step: 0,
            buffers,
        }
    }

    /// One update of every trainable parameter. Frozen entries are skipped.
    pub fn apply(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.buffers.len() != store.len() {
            return Err(Error::Contract(format!(
                "{} gradients / {} buffers for {} parameters",
                grads.len(),
                self.buffers.len(),
                store.len()
            )));
        }
        for ((p, g), bufs) in store.iter().zip(grads).zip(&self.buffers) {
            if p.value.shape() != g.shape() || bufs.iter().any(|b| b.shape() != g.shape()) {
                return Err(Error::Contract(format!(
                    "gradient shape {:?} does not match parameter {} {:?}",
                    g.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
        }
        self.step += 1;
        let c = self.cfg;
        let t = self.step as i32;
        let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
        for ((p, g), bufs) in store.iter_mut().zip(grads).zip(self.buffers.iter_mut()) {
            if !p.trainable {
                continue;
            }
            let w = p.value.data_mut();
            let g = g.data();
            match c.kind {
                OptimizerKind::SgdMomentum => {
                    let v = bufs[0].data_mut();
                    for i in 0..w.len() {
                        let gi = g[i] + c.weight_decay * w[i];
                        v[i] = c.momentum * v[i] + gi;
                        w[i] -= lr * v[i];
                    }
                }
                OptimizerKind::Adamw => {
                    let (m, v) = bufs.split_at_mut(1);
                    let (m, v) = (m[0].data_mut(), v[0].data_mut());
                    for i in 0..w.len() {
                        w[i] -= lr * c.weight_decay * w[i];
                        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                        let mh = m[i] / bc1;
                        let vh = v[i] / bc2;
                        w[i] -= lr * mh / (vh.sqrt() + c.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
