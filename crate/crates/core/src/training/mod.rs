//! Photometric loss, AdamW with a warmup-cosine schedule, and the training
//! step with gradient-norm skipping and clipping.
//!
//! The perceptual term is a stand-in: [`GradientDifference`] compares image
//! gradients instead of pretrained-network features. Other proxies plug in
//! through [`PerceptualProxy`].
//!
//! The metrics log holds one line per step:
//! `step=<n> loss=<x> grad_norm=<x> lr=<x> skipped=<0|1>`.

mod loss;
mod optim;
mod step;

pub use loss::{compute_loss, compute_loss_with, GradientDifference, LossValue, PerceptualProxy};
pub use optim::{adamw_update, lr_at, TrainConfig};
pub use step::{
    adamw_step, apply_gradients, compute_gradients, sample_batch, train_step, train_until,
    BatchGradients, StepMetrics, TrainState,
};
