use serde::{Deserialize, Serialize};

use super::params::{GradSet, ParamSet};
use crate::error::{Error, Result};

/// SGD with momentum, L2 weight decay and a step learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Multiplier applied at each listed epoch.
    pub decay_factor: f64,
    /// 1-based epochs at which `decay_factor` kicks in (cumulative).
    pub decay_epochs: Vec<usize>,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            decay_factor: 1.0,
            decay_epochs: Vec::new(),
            batch_size: 32,
        }
    }
}

impl SgdConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::rejected("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::rejected("momentum must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::rejected("weight_decay must be non-negative"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::rejected("decay_factor must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::rejected("batch_size must be positive"));
        }
        Ok(())
    }

    /// Learning rate in effect during 1-based `epoch`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let hits = self.decay_epochs.iter().filter(|&&d| epoch >= d).count();
        self.learning_rate * self.decay_factor.powi(hits as i32)
    }
}

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity(pub ParamSet);

impl Velocity {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Velocity(params.zeros_like())
    }
}

/// One update: `v ← μ·v + g + λ·θ`, `θ ← θ − lr·v`.
pub fn sgd_step(
    params: &mut ParamSet,
    grads: &GradSet,
    cfg: &SgdConfig,
    lr: f64,
    velocity: &mut Velocity,
) -> Result<()> {
    params.check_layout(grads)?;
    params.check_layout(&velocity.0)?;
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::divergence("sgd_step", format!("non-finite gradient in `{name}`")));
    }
    for i in 0..params.len() {
        let g = grads.tensor(i).values();
        let v = velocity.0.tensor_mut(i).values_mut();
        let p = params.tensor_mut(i).values_mut();
        for ((pv, vv), &gv) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            *vv = cfg.momentum * *vv + gv + cfg.weight_decay * *pv;
            *pv -= lr * *vv;
        }
    }
    if let Some(name) = params.first_non_finite() {
        return Err(Error::divergence("sgd_step", format!("non-finite parameter in `{name}`")));
    }
    Ok(())
}

/// Rescales `grads` in place so that its global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut GradSet, max_norm: f64) -> f64 {
    let n = grads.norm();
    if n > max_norm && n > 0.0 {
        grads.scale(max_norm / n);
    }
    n
}
