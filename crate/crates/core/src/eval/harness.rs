use std::time::Instant;

use crate::data::{generate_scene, sample_example, SampleMode, SceneExample};
use crate::diffnum::{Scalar, Tape, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{norm, sub, CameraModel};
use crate::image::Image;
use crate::model::{
    decode_from_latents, encode_latents, forward_decoder_only, prepare_inputs, prepare_target,
    synthesize_views, Architecture, LvsmConfig, LvsmWeights,
};
use crate::tokenizer::{decode_output_head, GridMeta, TokenKind, TokenSequence};

use super::metrics::{psnr, ssim};

/// Scores of one example, averaged over its targets.
#[derive(Clone, Debug)]
pub struct SceneEval {
    pub psnr: f64,
    pub ssim: f64,
    pub predictions: Vec<Image>,
}

fn score(predictions: Vec<Image>, example: &SceneExample) -> Result<SceneEval> {
    let n = predictions.len().max(1) as f64;
    let (mut p, mut s) = (0.0, 0.0);
    for (pred, t) in predictions.iter().zip(&example.targets) {
        p += psnr(pred, &t.image)?;
        s += ssim(pred, &t.image)?;
    }
    Ok(SceneEval {
        psnr: p / n,
        ssim: s / n,
        predictions,
    })
}

/// Renders every target of every example from all of its inputs.
pub fn evaluate_model<T: Scalar>(
    weights: &LvsmWeights<T>,
    config: &LvsmConfig,
    examples: &[SceneExample],
) -> Result<Vec<SceneEval>> {
    examples
        .iter()
        .map(|ex| {
            let targets: Vec<&CameraModel> = ex.targets.iter().map(|t| &t.camera).collect();
            let preds = synthesize_views(weights, config, &ex.input_pairs(), &targets)?;
            score(preds, ex)
        })
        .collect()
}

/// The input image whose camera center is closest to `target`'s.
pub fn copy_nearest_input(example: &SceneExample, target: &CameraModel) -> Result<Image> {
    let dist = |c: &CameraModel| norm(sub(c.pose.center(), target.pose.center()));
    example
        .inputs
        .iter()
        .min_by(|a, b| dist(&a.camera).total_cmp(&dist(&b.camera)))
        .map(|v| v.image.clone())
        .ok_or_else(|| Error::Config("example has no input views".into()))
}

pub fn evaluate_copy_nearest(examples: &[SceneExample]) -> Result<Vec<SceneEval>> {
    examples
        .iter()
        .map(|ex| {
            let preds = ex
                .targets
                .iter()
                .map(|t| copy_nearest_input(ex, &t.camera))
                .collect::<Result<_>>()?;
            score(preds, ex)
        })
        .collect()
}

/// Mean metrics over all examples when only the first `views` inputs are used.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepRow {
    pub views: usize,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn view_count_sweep<T: Scalar>(
    weights: &LvsmWeights<T>,
    config: &LvsmConfig,
    examples: &[SceneExample],
    counts: &[usize],
) -> Result<Vec<SweepRow>> {
    let available = examples.iter().map(|e| e.inputs.len()).min().unwrap_or(0);
    if let Some(&c) = counts.iter().find(|&&c| c == 0 || c > available) {
        return Err(Error::Config(format!(
            "view count {c} outside 1..={available} available input views"
        )));
    }
    counts
        .iter()
        .map(|&c| {
            let subset = examples
                .iter()
                .map(|e| e.with_input_count(c))
                .collect::<Result<Vec<_>>>()?;
            let scores = evaluate_model(weights, config, &subset)?;
            let n = scores.len().max(1) as f64;
            Ok(SweepRow {
                views: c,
                psnr: scores.iter().map(|s| s.psnr).sum::<f64>() / n,
                ssim: scores.iter().map(|s| s.ssim).sum::<f64>() / n,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimingRow {
    pub views: usize,
    /// Median wall time to render one target view.
    pub median_seconds: f64,
}

fn project<T: Scalar>(
    patches: &Tensor<T>,
    w: &Tensor<T>,
    kind: TokenKind,
    grid: GridMeta,
) -> Result<TokenSequence<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(patches.clone());
    let w = tape.constant(w.clone());
    let y = tape.matmul(x, w)?;
    Ok(TokenSequence {
        tokens: tape.value(y).clone(),
        kind,
        grid: Some(grid),
    })
}

/// Times rendering one target view for each input-view count. For the
/// encoder-decoder only the decoder runs inside the timed region (latents are
/// computed beforehand); the decoder-only model runs its full pass. One warmup
/// run precedes the `repetitions` timed runs.
pub fn decode_timing<T: Scalar>(
    weights: &LvsmWeights<T>,
    config: &LvsmConfig,
    counts: &[usize],
    repetitions: usize,
    resolution: usize,
) -> Result<Vec<TimingRow>> {
    if repetitions < 3 {
        return Err(Error::Config(format!(
            "timing needs at least 3 repetitions, got {repetitions}"
        )));
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Ok(Vec::new());
    }
    let example = sample_example(
        &generate_scene(0),
        SampleMode::Object,
        max,
        1,
        0,
        resolution,
    )?;
    counts
        .iter()
        .map(|&c| {
            let ex = example.with_input_count(c)?;
            let prepared = prepare_inputs::<T>(&ex.input_pairs(), config.patch_size)?;
            let target_grid = GridMeta {
                views: 1,
                ..prepared.grid
            };
            let tp = prepare_target(&prepared, &ex.targets[0].camera)?;
            let x = project(
                &prepared.patches,
                &weights.input_proj,
                TokenKind::InputImage,
                prepared.grid,
            )?;
            let q = project(
                &tp,
                &weights.target_proj,
                TokenKind::TargetQuery,
                target_grid,
            )?;
            let latents = match config.architecture {
                Architecture::EncoderDecoder => Some(encode_latents(weights, config, &x)?),
                Architecture::DecoderOnly => None,
            };
            let run = || -> Result<Image> {
                let y = match &latents {
                    Some(z) => decode_from_latents(weights, config, z, &q)?,
                    None => forward_decoder_only(weights, config, &x, &q)?,
                };
                decode_output_head(&y, &weights.output_proj)
            };
            run()?;
            let mut times = Vec::with_capacity(repetitions);
            for _ in 0..repetitions {
                let start = Instant::now();
                std::hint::black_box(run()?);
                times.push(start.elapsed().as_secs_f64());
            }
            times.sort_by(f64::total_cmp);
            Ok(TimingRow {
                views: c,
                median_seconds: times[times.len() / 2],
            })
        })
        .collect()
}

/// `input | prediction | ground truth`, side by side.
pub fn comparison_grid(input: &Image, prediction: &Image, truth: &Image) -> Result<Image> {
    Image::hstack(&[input, prediction, truth])
}
