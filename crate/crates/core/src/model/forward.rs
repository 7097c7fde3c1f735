//! Transformer blocks and the encoder-decoder / decoder-only forward passes.

use super::mask::{build_variant_mask, AttentionVariantMask};
use super::params::{LayerParams, LvsmParams, LvsmWeights};
use super::{Architecture, LvsmConfig};
use crate::diffnum::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{
    central_reference_index, compute_plucker_map, normalize_cameras, CameraModel, CameraPose,
    SimilarityTransform,
};
use crate::image::Image;
use crate::tokenizer::{
    decode_on_tape, input_patch_matrix, target_patch_matrix, GridMeta, TokenKind, TokenSequence,
};

/// Model parameters recorded on a tape.
pub type BoundParams = LvsmParams<Var>;

pub fn bind_params<T: Scalar>(
    tape: &mut Tape<T>,
    weights: &LvsmWeights<T>,
    trainable: bool,
) -> BoundParams {
    weights.map(|_, t| tape.leaf(t.clone(), trainable))
}

fn rows<T: Scalar>(tape: &Tape<T>, v: Var) -> usize {
    tape.value(v).shape()[0]
}

/// Pre-norm residual block: `x + Attn(LN(x))`, then `+ MLP(LN(·))`.
///
/// With a mask whose latents are not updated, the leading context rows are
/// passed through unchanged.
pub fn transformer_layer_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    layer: &LayerParams<Var>,
    heads: usize,
    mask: Option<&AttentionVariantMask>,
) -> Result<Var> {
    let len = rows(tape, x);
    if let Some(m) = mask {
        if m.size() != len {
            return Err(Error::shape(format!(
                "mask over {} tokens for {len} tokens",
                m.size()
            )));
        }
    }
    let h = tape.layer_norm(x, layer.ln_attn)?;
    let q = tape.matmul(h, layer.wq)?;
    let k = tape.matmul(h, layer.wk)?;
    let v = tape.matmul(h, layer.wv)?;
    let attn_mask = mask.filter(|m| !m.is_full()).map(|m| m.allowed());
    let a = tape.attention(q, k, v, layer.qk_gain, heads, attn_mask)?;
    let proj = tape.matmul(a, layer.wo)?;
    let x1 = tape.add(x, proj)?;
    let h2 = tape.layer_norm(x1, layer.ln_mlp)?;
    let up = tape.matmul(h2, layer.w_up)?;
    let act = tape.gelu(up);
    let down = tape.matmul(act, layer.w_down)?;
    let out = tape.add(x1, down)?;
    match mask.map_or(0, |m| m.frozen_rows()) {
        0 => Ok(out),
        frozen => {
            let keep = tape.slice(x, 0, 0, frozen)?;
            let rest = tape.slice(out, 0, frozen, len - frozen)?;
            tape.concat(&[keep, rest], 0)
        }
    }
}

/// Runs one block on constant tokens.
pub fn transformer_layer<T: Scalar>(
    tokens: &TokenSequence<T>,
    layer: &LayerParams<Tensor<T>>,
    heads: usize,
    mask: Option<&AttentionVariantMask>,
) -> Result<TokenSequence<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(tokens.tokens.clone());
    let bound = LayerParams {
        ln_attn: tape.constant(layer.ln_attn.clone()),
        wq: tape.constant(layer.wq.clone()),
        wk: tape.constant(layer.wk.clone()),
        wv: tape.constant(layer.wv.clone()),
        wo: tape.constant(layer.wo.clone()),
        qk_gain: tape.constant(layer.qk_gain.clone()),
        ln_mlp: tape.constant(layer.ln_mlp.clone()),
        w_up: tape.constant(layer.w_up.clone()),
        w_down: tape.constant(layer.w_down.clone()),
    };
    let y = transformer_layer_on_tape(&mut tape, x, &bound, heads, mask)?;
    Ok(TokenSequence {
        tokens: tape.value(y).clone(),
        ..tokens.clone()
    })
}

fn require(config: &LvsmConfig, arch: Architecture) -> Result<()> {
    config.validate()?;
    if config.architecture != arch {
        return Err(Error::Config(format!(
            "operation needs a {arch} model, config is {}",
            config.architecture
        )));
    }
    Ok(())
}

/// Encoder: self-attention over `[x, e]`; returns the updated latent rows `z`.
pub fn encode_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    params: &BoundParams,
    config: &LvsmConfig,
    x: Var,
) -> Result<Var> {
    let latents = params
        .latents
        .ok_or_else(|| Error::Config("encoder-decoder weights carry no latent tokens".into()))?;
    let lx = rows(tape, x);
    let l = rows(tape, latents);
    let mut seq = tape.concat(&[x, latents], 0)?;
    for layer in &params.encoder {
        seq = transformer_layer_on_tape(tape, seq, layer, config.heads, None)?;
    }
    tape.slice(seq, 0, lx, l)
}

/// Encoder-decoder decoder: self-attention over `[z, q]` under the variant mask;
/// returns the rows at the target positions.
pub fn decode_latents_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    params: &BoundParams,
    config: &LvsmConfig,
    z: Var,
    q: Var,
) -> Result<Var> {
    let (l, lq) = (rows(tape, z), rows(tape, q));
    let mask = build_variant_mask(config.attention, Architecture::EncoderDecoder, l, lq)?;
    let mut seq = tape.concat(&[z, q], 0)?;
    for layer in &params.decoder {
        seq = transformer_layer_on_tape(tape, seq, layer, config.heads, Some(&mask))?;
    }
    tape.slice(seq, 0, l, lq)
}

/// Single stream over `[x, q]`; returns the rows at the target positions.
pub fn decoder_only_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    params: &BoundParams,
    config: &LvsmConfig,
    x: Var,
    q: Var,
) -> Result<Var> {
    let (lx, lq) = (rows(tape, x), rows(tape, q));
    let mask = build_variant_mask(config.attention, Architecture::DecoderOnly, lx, lq)?;
    let mut seq = tape.concat(&[x, q], 0)?;
    for layer in &params.decoder {
        seq = transformer_layer_on_tape(tape, seq, layer, config.heads, Some(&mask))?;
    }
    tape.slice(seq, 0, lx, lq)
}

fn check_tokens<T: Scalar>(config: &LvsmConfig, seqs: &[&TokenSequence<T>]) -> Result<()> {
    for s in seqs {
        if s.tokens.shape().len() != 2 || s.dim() != config.dim {
            return Err(Error::shape(format!(
                "tokens {:?} for model dim {}",
                s.tokens.shape(),
                config.dim
            )));
        }
    }
    Ok(())
}

fn output_sequence<T: Scalar>(
    tape: &Tape<T>,
    y: Var,
    target: &TokenSequence<T>,
) -> TokenSequence<T> {
    TokenSequence {
        tokens: tape.value(y).clone(),
        kind: TokenKind::Output,
        grid: target.grid,
    }
}

/// Encoder then decoder; outputs one token per target token.
pub fn forward_encoder_decoder<T: Scalar>(
    weights: &LvsmWeights<T>,
    config: &LvsmConfig,
    input_tokens: &TokenSequence<T>,
    target_tokens: &TokenSequence<T>,
) -> Result<TokenSequence<T>> {
    require(config, Architecture::EncoderDecoder)?;
    check_tokens(config, &[input_tokens, target_tokens])?;
    let mut tape = Tape::new();
    let params = bind_params(&mut tape, weights, false);
    let x = tape.constant(input_tokens.tokens.clone());
    let q = tape.constant(target_tokens.tokens.clone());
    let z = encode_on_tape(&mut tape, &params, config, x)?;
    let y = decode_latents_on_tape(&mut tape, &params, config, z, q)?;
    Ok(output_sequence(&tape, y, target_tokens))
}

/// The latent scene representation `z` for a set of input tokens.
pub fn encode_latents<T: Scalar>(
    weights: &LvsmWeights<T>,
    config: &LvsmConfig,
    input_tokens: &TokenSequence<T>,
) -> Result<TokenSequence<T>> {
    require(config, Architecture::EncoderDecoder)?;
    check_tokens(config, &[input_tokens])?;
    let mut tape = Tape::new();
    let params = bind_params(&mut tape, weights, false);
    let x = tape.constant(input_tokens.tokens.clone());
    let z = encode_on_tape(&mut tape, &params, config, x)?;
    Ok(TokenSequence {
        tokens: tape.value(z).clone(),
        kind: TokenKind::Latent,
        grid: None,
    })
}

/// Decoder pass from precomputed latents.
pub fn decode_from_latents<T: Scalar>(
    weights: &LvsmWeights<T>,
    config: &LvsmConfig,
    latents: &TokenSequence<T>,
    target_tokens: &TokenSequence<T>,
) -> Result<TokenSequence<T>> {
    require(config, Architecture::EncoderDecoder)?;
    check_tokens(config, &[latents, target_tokens])?;
    let mut tape = Tape::new();
    let params = bind_params(&mut tape, weights, false);
    let z = tape.constant(latents.tokens.clone());
    let q = tape.constant(target_tokens.tokens.clone());
    let y = decode_latents_on_tape(&mut tape, &params, config, z, q)?;
    Ok(output_sequence(&tape, y, target_tokens))
}

pub fn forward_decoder_only<T: Scalar>(
    weights: &LvsmWeights<T>,
    config: &LvsmConfig,
    input_tokens: &TokenSequence<T>,
    target_tokens: &TokenSequence<T>,
) -> Result<TokenSequence<T>> {
    require(config, Architecture::DecoderOnly)?;
    check_tokens(config, &[input_tokens, target_tokens])?;
    let mut tape = Tape::new();
    let params = bind_params(&mut tape, weights, false);
    let x = tape.constant(input_tokens.tokens.clone());
    let q = tape.constant(target_tokens.tokens.clone());
    let y = decoder_only_on_tape(&mut tape, &params, config, x, q)?;
    Ok(output_sequence(&tape, y, target_tokens))
}

/// Input views after camera normalization, as patch vectors.
#[derive(Clone, Debug)]
pub struct PreparedInputs<T> {
    /// `(N·HW/p²) × 9p²`, view-major.
    pub patches: Tensor<T>,
    pub grid: GridMeta,
    pub transform: SimilarityTransform,
}

/// Normalizes the input cameras (reference: the most central input camera)
/// and builds the `[RGB, Plücker]` patch vectors of every view.
pub fn prepare_inputs<T: Scalar>(
    inputs: &[(&Image, &CameraModel)],
    patch: usize,
) -> Result<PreparedInputs<T>> {
    let (first, _) = inputs
        .first()
        .ok_or_else(|| Error::Config("at least one input view is required".into()))?;
    let (h, w) = (first.height(), first.width());
    if inputs
        .iter()
        .any(|(img, _)| img.height() != h || img.width() != w)
    {
        return Err(Error::shape("input images differ in resolution"));
    }
    let poses: Vec<CameraPose> = inputs.iter().map(|(_, c)| c.pose).collect();
    let (normalized, transform) = normalize_cameras(&poses, central_reference_index(&poses))?;
    let mut data = Vec::new();
    let mut total = 0;
    for ((img, cam), pose) in inputs.iter().zip(&normalized) {
        let rays = compute_plucker_map(pose, &cam.intrinsics, h, w)?;
        let m = input_patch_matrix::<T>(img, &rays, patch)?;
        total += m.shape()[0];
        data.extend_from_slice(m.data());
    }
    Ok(PreparedInputs {
        patches: Tensor::from_vec(vec![total, patch * patch * 9], data)?,
        grid: GridMeta {
            views: inputs.len(),
            grid_rows: h / patch,
            grid_cols: w / patch,
            patch,
        },
        transform,
    })
}

/// Target ray patches `(HW/p²) × 6p²` in the inputs' normalized frame.
pub fn prepare_target<T: Scalar>(
    prepared: &PreparedInputs<T>,
    target: &CameraModel,
) -> Result<Tensor<T>> {
    let g = prepared.grid;
    let pose = prepared.transform.apply_pose(&target.pose);
    let rays = compute_plucker_map(&pose, &target.intrinsics, g.image_height(), g.image_width())?;
    target_patch_matrix(&rays, g.patch)
}

/// Records the full pipeline for several targets sharing one set of inputs;
/// returns one `H × W × 3` image node per target.
pub fn render_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    params: &BoundParams,
    config: &LvsmConfig,
    input_patches: Var,
    target_patches: &[Var],
    grid: GridMeta,
) -> Result<Vec<Var>> {
    config.validate()?;
    let x = tape.matmul(input_patches, params.input_proj)?;
    let z = match config.architecture {
        Architecture::EncoderDecoder => Some(encode_on_tape(tape, params, config, x)?),
        Architecture::DecoderOnly => None,
    };
    let mut images = Vec::with_capacity(target_patches.len());
    for &tp in target_patches {
        let q = tape.matmul(tp, params.target_proj)?;
        let y = match z {
            Some(z) => decode_latents_on_tape(tape, params, config, z, q)?,
            None => decoder_only_on_tape(tape, params, config, x, q)?,
        };
        images.push(decode_on_tape(tape, y, params.output_proj, grid)?);
    }
    Ok(images)
}

fn to_image<T: Scalar>(t: &Tensor<T>) -> Result<Image> {
    let s = t.shape();
    Image::new(
        s[0],
        s[1],
        t.data().iter().map(|v| v.as_f64() as f32).collect(),
    )
}

/// Renders every target camera from the posed inputs.
pub fn synthesize_views<T: Scalar>(
    weights: &LvsmWeights<T>,
    config: &LvsmConfig,
    inputs: &[(&Image, &CameraModel)],
    targets: &[&CameraModel],
) -> Result<Vec<Image>> {
    let prepared = prepare_inputs::<T>(inputs, config.patch_size)?;
    let mut tape = Tape::new();
    let params = bind_params(&mut tape, weights, false);
    let x = tape.constant(prepared.patches.clone());
    let mut tps = Vec::with_capacity(targets.len());
    for t in targets {
        let tp = prepare_target(&prepared, t)?;
        tps.push(tape.constant(tp));
    }
    let images = render_on_tape(&mut tape, &params, config, x, &tps, prepared.grid)?;
    images.iter().map(|&v| to_image(tape.value(v))).collect()
}

pub fn synthesize_view<T: Scalar>(
    weights: &LvsmWeights<T>,
    config: &LvsmConfig,
    inputs: &[(&Image, &CameraModel)],
    target: &CameraModel,
) -> Result<Image> {
    Ok(synthesize_views(weights, config, inputs, &[target])?.remove(0))
}
