use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::compute_loss;
use super::optim::{adamw_update, lr_at, TrainConfig};
use crate::data::SceneExample;
use crate::diffnum::{global_grad_norm, DType, Scalar, Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::{
    bind_params, is_layer_norm_gain, prepare_inputs, prepare_target, read_checkpoint,
    render_on_tape, write_checkpoint, CheckpointHeader, LvsmConfig, LvsmWeights, TrainCounters,
};
use crate::seed::derive_indexed;

/// Weights, AdamW moments and counters of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    /// Steps taken so far, skipped ones included.
    pub step: u64,
    pub skipped: u64,
    pub weights: LvsmWeights<T>,
    pub m: LvsmWeights<T>,
    pub v: LvsmWeights<T>,
    /// Root seed; the batch of step `s` is drawn from `(seed, s)` alone.
    pub seed: u64,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(weights: LvsmWeights<T>, seed: u64) -> Self {
        let zeros = weights.map(|_, t| Tensor::zeros(t.shape().to_vec()));
        Self {
            step: 0,
            skipped: 0,
            m: zeros.clone(),
            v: zeros,
            weights,
            seed,
        }
    }

    pub fn save(&self, path: &Path, model: &LvsmConfig, run: Option<toml::Table>) -> Result<()> {
        let header = CheckpointHeader {
            seed: self.seed,
            model: model.clone(),
            train_state: Some(TrainCounters {
                step: self.step,
                skipped: self.skipped,
            }),
            run,
        };
        let mut tensors: Vec<(String, &Tensor<T>)> = self.weights.named();
        tensors.extend(
            self.m
                .named()
                .into_iter()
                .map(|(n, t)| (format!("optim.m.{n}"), t)),
        );
        tensors.extend(
            self.v
                .named()
                .into_iter()
                .map(|(n, t)| (format!("optim.v.{n}"), t)),
        );
        write_checkpoint(path, &header, &tensors)
    }

    /// Restores a run; moments start at zero when the file holds none.
    pub fn load(path: &Path) -> Result<(Self, CheckpointHeader, DType)> {
        let (header, dtype, tensors) = read_checkpoint::<T>(path)?;
        let mut weights = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, t) in tensors {
            if let Some(n) = name.strip_prefix("optim.m.") {
                m.push((n.to_string(), t));
            } else if let Some(n) = name.strip_prefix("optim.v.") {
                v.push((n.to_string(), t));
            } else {
                weights.push((name, t));
            }
        }
        let weights = LvsmWeights::from_named(&header.model, weights)?;
        let counters = header.train_state.unwrap_or_default();
        let mut state = Self::new(weights, header.seed);
        if !m.is_empty() || !v.is_empty() {
            state.m = LvsmWeights::from_named(&header.model, m)?;
            state.v = LvsmWeights::from_named(&header.model, v)?;
        }
        state.step = counters.step;
        state.skipped = counters.skipped;
        Ok((state, header, dtype))
    }
}

/// Mean loss over every target of a batch and its parameter gradients.
#[derive(Clone, Debug)]
pub struct BatchGradients<T> {
    pub loss: f64,
    pub target_losses: Vec<f64>,
    pub grads: LvsmWeights<T>,
}

/// Forward and backward over all targets of `batch`; losses and gradients are
/// averaged over targets.
pub fn compute_gradients<T: Scalar>(
    weights: &LvsmWeights<T>,
    config: &LvsmConfig,
    batch: &[SceneExample],
    lambda: f64,
) -> Result<BatchGradients<T>> {
    let total_targets: usize = batch.iter().map(|ex| ex.targets.len()).sum();
    if total_targets == 0 {
        return Err(Error::Config("batch has no target views".into()));
    }
    let inv = 1.0 / total_targets as f64;
    let mut grads = weights.map(|_, t| Tensor::zeros(t.shape().to_vec()));
    let mut target_losses = Vec::with_capacity(total_targets);
    for ex in batch {
        if ex.targets.is_empty() {
            continue;
        }
        let prepared = prepare_inputs::<T>(&ex.input_pairs(), config.patch_size)?;
        let mut tape = Tape::new();
        let params = bind_params(&mut tape, weights, true);
        let x = tape.constant(prepared.patches.clone());
        let mut tps = Vec::with_capacity(ex.targets.len());
        for t in &ex.targets {
            let tp = prepare_target(&prepared, &t.camera)?;
            tps.push(tape.constant(tp));
        }
        let images = render_on_tape(&mut tape, &params, config, x, &tps, prepared.grid)?;
        let mut seeds = Vec::with_capacity(images.len());
        for (&img, t) in images.iter().zip(&ex.targets) {
            let gt = Tensor::from_vec(
                vec![t.image.height(), t.image.width(), 3],
                t.image
                    .data()
                    .iter()
                    .map(|&v| T::of(f64::from(v)))
                    .collect(),
            )?;
            let loss = compute_loss(tape.value(img), &gt, lambda)?;
            target_losses.push(loss.total);
            seeds.push((img, loss.grad.map(|g| g * T::of(inv))));
        }
        let mut g = tape.backward_many(seeds)?;
        let vars = params.values();
        for (acc, var) in grads.values_mut().into_iter().zip(vars) {
            if let Some(gv) = g.take(*var) {
                acc.data_mut()
                    .iter_mut()
                    .zip(gv.data())
                    .for_each(|(a, &b)| *a += b);
            }
        }
    }
    let loss = target_losses.iter().sum::<f64>() * inv;
    Ok(BatchGradients {
        loss,
        target_losses,
        grads,
    })
}

/// What happened in one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    /// Index of the step (before the counter advanced).
    pub step: u64,
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub lr: f64,
    pub skipped: bool,
}

impl fmt::Display for StepMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} loss={:e} grad_norm={:e} lr={:e} skipped={}",
            self.step,
            self.loss,
            self.grad_norm,
            self.lr,
            u8::from(self.skipped)
        )
    }
}

impl FromStr for StepMetrics {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed metrics line `{s}`"));
        let mut fields = std::collections::HashMap::new();
        for part in s.split_whitespace() {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(bad);
        let num = |k: &str| get(k)?.parse::<f64>().map_err(|_| bad());
        Ok(StepMetrics {
            step: get("step")?.parse().map_err(|_| bad())?,
            loss: num("loss")?,
            grad_norm: num("grad_norm")?,
            lr: num("lr")?,
            skipped: match get("skipped")? {
                "0" => false,
                "1" => true,
                _ => return Err(bad()),
            },
        })
    }
}

/// AdamW over every parameter, without touching the step counters. The bias
/// correction uses the number of updates applied so far, this one included.
pub fn adamw_step<T: Scalar>(
    state: &mut TrainState<T>,
    grads: &LvsmWeights<T>,
    lr: f64,
    config: &TrainConfig,
) {
    let t = state.step - state.skipped + 1;
    let names: Vec<String> = state.weights.named().into_iter().map(|(n, _)| n).collect();
    let params = state.weights.values_mut();
    let moments = state.m.values_mut().into_iter().zip(state.v.values_mut());
    for (((p, (m, v)), g), name) in params
        .into_iter()
        .zip(moments)
        .zip(grads.values())
        .zip(&names)
    {
        adamw_update(
            p.data_mut(),
            g.data(),
            m.data_mut(),
            v.data_mut(),
            t,
            lr,
            !is_layer_norm_gain(name),
            config,
        );
    }
}

/// Applies the skip/clip rule and AdamW to `state`, then advances the step counter.
///
/// A pre-clip norm above `skip_threshold` leaves weights and moments untouched;
/// otherwise gradients are scaled by `min(1, clip_norm / norm)`.
pub fn apply_gradients<T: Scalar>(
    state: &mut TrainState<T>,
    grads: &LvsmWeights<T>,
    loss: f64,
    config: &TrainConfig,
) -> Result<StepMetrics> {
    let step = state.step;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            detail: format!("batch loss {loss}"),
        });
    }
    let grad_norm = global_grad_norm(grads.values().into_iter().map(Some))?;
    if !grad_norm.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            detail: format!("loss {loss} but gradient norm {grad_norm}"),
        });
    }
    let lr = lr_at(step, config);
    let skipped = grad_norm > config.skip_threshold;
    if skipped {
        state.skipped += 1;
    } else {
        let scale = if grad_norm > config.clip_norm {
            config.clip_norm / grad_norm
        } else {
            1.0
        };
        let scaled = grads.map(|_, g| g.map(|x| x * T::of(scale)));
        adamw_step(state, &scaled, lr, config);
    }
    state.step += 1;
    Ok(StepMetrics {
        step,
        loss,
        grad_norm,
        lr,
        skipped,
    })
}

/// Forward/backward over `batch` followed by [`apply_gradients`].
pub fn train_step<T: Scalar>(
    state: &mut TrainState<T>,
    model: &LvsmConfig,
    batch: &[SceneExample],
    config: &TrainConfig,
) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    let g = compute_gradients(&state.weights, model, batch, config.perceptual_weight)?;
    if !g.loss.is_finite() {
        let bad: Vec<String> = g
            .target_losses
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.is_finite())
            .map(|(i, l)| format!("target {i}: {l}"))
            .collect();
        return Err(Error::NonFiniteLoss {
            step: state.step,
            detail: bad.join(", "),
        });
    }
    apply_gradients(state, &g.grads, g.loss, config)
}

/// The batch of step `step`: examples drawn with replacement and, when
/// `targets_per_example` is set, a random subset of each example's targets.
pub fn sample_batch(
    dataset: &[SceneExample],
    config: &TrainConfig,
    seed: u64,
    step: u64,
) -> Result<Vec<SceneExample>> {
    if dataset.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(seed, "sampling", step));
    (0..config.batch_size)
        .map(|_| {
            let ex = &dataset[rng.random_range(0..dataset.len())];
            let m = ex.targets.len();
            let k = config.targets_per_example;
            if k == 0 || k >= m {
                Ok(ex.clone())
            } else {
                let mut idx = sample(&mut rng, m, k).into_vec();
                idx.sort_unstable();
                ex.with_targets(&idx)
            }
        })
        .collect()
}

/// Runs steps until `state.step == end_step`, calling `on_step` after each.
pub fn train_until<T: Scalar>(
    state: &mut TrainState<T>,
    model: &LvsmConfig,
    config: &TrainConfig,
    dataset: &[SceneExample],
    end_step: u64,
    mut on_step: impl FnMut(&TrainState<T>, &StepMetrics) -> Result<()>,
) -> Result<()> {
    config.validate()?;
    while state.step < end_step {
        let batch = sample_batch(dataset, config, state.seed, state.step)?;
        let metrics = train_step(state, model, &batch, config)?;
        on_step(state, &metrics)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_line_roundtrip() {
        let m = StepMetrics {
            step: 12,
            loss: 0.123456789012345,
            grad_norm: 3.5,
            lr: 1e-4 / 3.0,
            skipped: true,
        };
        let line = m.to_string();
        assert_eq!(line.parse::<StepMetrics>().unwrap(), m);
        assert!("step=1 loss=x".parse::<StepMetrics>().is_err());
    }
}
