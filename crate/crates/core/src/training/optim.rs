use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::diffnum::Scalar;
use crate::error::{Error, Result};

/// Optimizer, schedule and stability settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub peak_lr: f64,
    /// Linear warmup from 0 to `peak_lr`.
    pub warmup_steps: u64,
    pub total_steps: u64,
    /// Examples per step.
    pub batch_size: usize,
    /// Targets drawn per example each step; 0 uses all of them.
    pub targets_per_example: usize,
    /// Weight λ of the perceptual proxy.
    pub perceptual_weight: f64,
    pub clip_norm: f64,
    /// Steps whose pre-clip gradient norm exceeds this are skipped.
    pub skip_threshold: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Decoupled decay; layer-norm gains are exempt.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 4e-4,
            warmup_steps: 2500,
            total_steps: 100_000,
            batch_size: 8,
            targets_per_example: 0,
            perceptual_weight: 1.0,
            clip_norm: 1.0,
            skip_threshold: 5.0,
            beta1: 0.9,
            beta2: 0.95,
            adam_eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(0 < self.warmup_steps && self.warmup_steps < self.total_steps) {
            return fail(format!(
                "need 0 < warmup_steps < total_steps, got {} and {}",
                self.warmup_steps, self.total_steps
            ));
        }
        if !(self.clip_norm > 0.0 && self.skip_threshold > 0.0) {
            return fail("clip_norm and skip_threshold must be positive".into());
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return fail(format!("peak_lr must be positive, got {}", self.peak_lr));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return fail("betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0 && self.weight_decay >= 0.0 && self.perceptual_weight >= 0.0) {
            return fail(
                "adam_eps must be positive; weight_decay and perceptual_weight non-negative".into(),
            );
        }
        Ok(())
    }
}

/// Linear warmup from 0, then cosine decay to 0 at `total_steps`.
pub fn lr_at(step: u64, config: &TrainConfig) -> f64 {
    let (warmup, total) = (config.warmup_steps as f64, config.total_steps as f64);
    let s = step.min(config.total_steps) as f64;
    if s < warmup {
        config.peak_lr * s / warmup
    } else {
        config.peak_lr * 0.5 * (1.0 + (PI * (s - warmup) / (total - warmup)).cos())
    }
}

/// One AdamW update of a parameter in place. `t` counts applied updates, starting at 1.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    decay: bool,
    config: &TrainConfig,
) {
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    let shrink = if decay {
        1.0 - lr * config.weight_decay
    } else {
        1.0
    };
    for i in 0..param.len() {
        let g = grad[i].as_f64();
        let mi = b1 * m[i].as_f64() + (1.0 - b1) * g;
        let vi = b2 * v[i].as_f64() + (1.0 - b2) * g * g;
        m[i] = T::of(mi);
        v[i] = T::of(vi);
        let step = lr * (mi / c1) / ((vi / c2).sqrt() + config.adam_eps);
        param[i] = T::of(param[i].as_f64() * shrink - step);
    }
}
