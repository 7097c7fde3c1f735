//! Parameter containers and initialization.
//!
//! [`LvsmParams`] is generic over what it holds, so the same structure
//! carries weight tensors, tape handles, gradients or optimizer moments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::LvsmConfig;
use crate::diffnum::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::tokenizer::{INPUT_CHANNELS, OUTPUT_CHANNELS, TARGET_CHANNELS};

/// Standard deviation used for the tokenizer maps, output head and latents.
pub const BASE_INIT_STD: f64 = 0.02;

/// Init standard deviation of the weight matrices in transformer layer `idx`.
pub fn layer_init_std(idx: usize) -> f64 {
    BASE_INIT_STD / (2.0 * (idx as f64 + 1.0)).sqrt()
}

/// One pre-norm transformer block. No bias terms.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<A> {
    pub ln_attn: A,
    pub wq: A,
    pub wk: A,
    pub wv: A,
    pub wo: A,
    pub qk_gain: A,
    pub ln_mlp: A,
    pub w_up: A,
    pub w_down: A,
}

const LAYER_FIELDS: [&str; 9] = [
    "ln_attn", "wq", "wk", "wv", "wo", "qk_gain", "ln_mlp", "w_up", "w_down",
];

impl<A> LayerParams<A> {
    fn fields(&self) -> [&A; 9] {
        [
            &self.ln_attn,
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.qk_gain,
            &self.ln_mlp,
            &self.w_up,
            &self.w_down,
        ]
    }

    fn fields_mut(&mut self) -> [&mut A; 9] {
        [
            &mut self.ln_attn,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.qk_gain,
            &mut self.ln_mlp,
            &mut self.w_up,
            &mut self.w_down,
        ]
    }

    fn try_map<B, E>(
        &self,
        prefix: &str,
        f: &mut impl FnMut(&str, &A) -> Result<B, E>,
    ) -> Result<LayerParams<B>, E> {
        let mut out = Vec::with_capacity(9);
        for (name, a) in LAYER_FIELDS.iter().zip(self.fields()) {
            out.push(f(&format!("{prefix}.{name}"), a)?);
        }
        let mut it = out.into_iter();
        let mut next = || it.next().expect("nine fields");
        Ok(LayerParams {
            ln_attn: next(),
            wq: next(),
            wk: next(),
            wv: next(),
            wo: next(),
            qk_gain: next(),
            ln_mlp: next(),
            w_up: next(),
            w_down: next(),
        })
    }
}

/// All learned parameters of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct LvsmParams<A> {
    pub input_proj: A,
    pub target_proj: A,
    pub output_proj: A,
    pub latents: Option<A>,
    pub encoder: Vec<LayerParams<A>>,
    pub decoder: Vec<LayerParams<A>>,
}

pub type LvsmWeights<T> = LvsmParams<Tensor<T>>;

impl<A> LvsmParams<A> {
    /// Parameters with their dotted names, in canonical order.
    pub fn named(&self) -> Vec<(String, &A)> {
        let mut out = vec![
            ("input_proj".to_string(), &self.input_proj),
            ("target_proj".to_string(), &self.target_proj),
            ("output_proj".to_string(), &self.output_proj),
        ];
        if let Some(l) = &self.latents {
            out.push(("latents".to_string(), l));
        }
        for (stack, layers) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (i, layer) in layers.iter().enumerate() {
                for (name, a) in LAYER_FIELDS.iter().zip(layer.fields()) {
                    out.push((format!("{stack}.{i}.{name}"), a));
                }
            }
        }
        out
    }

    pub fn values(&self) -> Vec<&A> {
        self.named().into_iter().map(|(_, a)| a).collect()
    }

    /// Mutable parameters in the same order as [`named`](Self::named).
    pub fn values_mut(&mut self) -> Vec<&mut A> {
        let mut out = vec![
            &mut self.input_proj,
            &mut self.target_proj,
            &mut self.output_proj,
        ];
        if let Some(l) = &mut self.latents {
            out.push(l);
        }
        for layer in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            out.extend(layer.fields_mut());
        }
        out
    }

    pub fn len(&self) -> usize {
        3 + usize::from(self.latents.is_some()) + 9 * (self.encoder.len() + self.decoder.len())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn try_map<B, E>(
        &self,
        mut f: impl FnMut(&str, &A) -> Result<B, E>,
    ) -> Result<LvsmParams<B>, E> {
        Ok(LvsmParams {
            input_proj: f("input_proj", &self.input_proj)?,
            target_proj: f("target_proj", &self.target_proj)?,
            output_proj: f("output_proj", &self.output_proj)?,
            latents: self.latents.as_ref().map(|l| f("latents", l)).transpose()?,
            encoder: self
                .encoder
                .iter()
                .enumerate()
                .map(|(i, l)| l.try_map(&format!("encoder.{i}"), &mut f))
                .collect::<Result<_, E>>()?,
            decoder: self
                .decoder
                .iter()
                .enumerate()
                .map(|(i, l)| l.try_map(&format!("decoder.{i}"), &mut f))
                .collect::<Result<_, E>>()?,
        })
    }

    pub fn map<B>(&self, mut f: impl FnMut(&str, &A) -> B) -> LvsmParams<B> {
        self.try_map(|n, a| Ok::<_, std::convert::Infallible>(f(n, a)))
            .unwrap_or_else(|e| match e {})
    }
}

/// Layer-norm gains are exempt from weight decay.
pub fn is_layer_norm_gain(name: &str) -> bool {
    name.ends_with(".ln_attn") || name.ends_with(".ln_mlp")
}

fn expected_shapes(config: &LvsmConfig) -> LvsmParams<Vec<usize>> {
    let (d, p, h) = (config.dim, config.patch_size, config.heads);
    let hidden = config.mlp_ratio * d;
    let layer = || LayerParams {
        ln_attn: vec![d],
        wq: vec![d, d],
        wk: vec![d, d],
        wv: vec![d, d],
        wo: vec![d, d],
        qk_gain: vec![h],
        ln_mlp: vec![d],
        w_up: vec![d, hidden],
        w_down: vec![hidden, d],
    };
    LvsmParams {
        input_proj: vec![p * p * INPUT_CHANNELS, d],
        target_proj: vec![p * p * TARGET_CHANNELS, d],
        output_proj: vec![d, p * p * OUTPUT_CHANNELS],
        latents: (config.latent_tokens > 0).then(|| vec![config.latent_tokens, d]),
        encoder: (0..config.encoder_layers).map(|_| layer()).collect(),
        decoder: (0..config.decoder_layers).map(|_| layer()).collect(),
    }
}

/// Draws all weights from `seed`.
///
/// Weight matrices of transformer layer `idx` (encoder layers first, then
/// decoder layers, counted globally) use `σ = 0.02 / sqrt(2·(idx+1))`;
/// tokenizer maps, the output head and latent tokens use `σ = 0.02`;
/// layer-norm gains start at 1 and QK gains at `sqrt(head_dim)`.
pub fn init_weights<T: Scalar>(config: &LvsmConfig, seed: u64) -> Result<LvsmWeights<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let qk_init = (config.head_dim() as f64).sqrt();
    let shapes = expected_shapes(config);
    let layer_std = |name: &str| -> Option<f64> {
        let mut parts = name.split('.');
        let stack = parts.next()?;
        let idx: usize = parts.next()?.parse().ok()?;
        match stack {
            "encoder" => Some(layer_init_std(idx)),
            "decoder" => Some(layer_init_std(config.encoder_layers + idx)),
            _ => None,
        }
    };
    Ok(shapes.map(|name, shape| {
        if is_layer_norm_gain(name) {
            Tensor::full(shape.clone(), T::one())
        } else if name.ends_with(".qk_gain") {
            Tensor::full(shape.clone(), T::of(qk_init))
        } else {
            let std = layer_std(name).unwrap_or(BASE_INIT_STD);
            Tensor::randn(shape.clone(), std, &mut rng)
        }
    }))
}

impl<T: Scalar> LvsmWeights<T> {
    /// Rebuilds weights from named tensors, checking names and shapes against `config`.
    pub fn from_named(config: &LvsmConfig, tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let mut by_name: std::collections::HashMap<String, Tensor<T>> =
            tensors.into_iter().collect();
        let weights = expected_shapes(config).try_map(|name, shape| {
            let t = by_name.remove(name).ok_or_else(|| {
                Error::Incompatible(format!("missing tensor `{name}` for config"))
            })?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Incompatible(format!(
                    "tensor `{name}` has shape {:?}, config expects {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        })?;
        if let Some(extra) = by_name.keys().find(|k| !k.starts_with("optim.")) {
            return Err(Error::Incompatible(format!("unexpected tensor `{extra}`")));
        }
        Ok(weights)
    }

    pub fn cast<U: Scalar>(&self) -> LvsmWeights<U> {
        self.map(|_, t| t.cast())
    }

    pub fn num_parameters(&self) -> usize {
        self.values().iter().map(|t| t.numel()).sum()
    }
}
