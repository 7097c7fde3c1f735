//! Decoder attention masks for the ablation variants.
//!
//! The decoder sequence is `[context..., targets...]`, where the context is
//! the latent tokens (encoder-decoder) or the input-image tokens
//! (decoder-only). Rows are queries, columns are keys.

use super::{Architecture, AttentionVariant};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionVariantMask {
    size: usize,
    allowed: Vec<bool>,
    context_len: usize,
    pub latents_updated: bool,
    pub targets_joint: bool,
}

impl AttentionVariantMask {
    /// The all-true mask over `size` tokens.
    pub fn full(size: usize) -> Self {
        Self {
            size,
            allowed: vec![true; size * size],
            context_len: 0,
            latents_updated: true,
            targets_joint: true,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn allowed(&self) -> &[bool] {
        &self.allowed
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.allowed[row * self.size + col]
    }

    pub fn is_full(&self) -> bool {
        self.latents_updated && self.allowed.iter().all(|&a| a)
    }

    pub fn count_allowed(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }

    /// Leading rows whose tokens pass through a layer unchanged.
    pub fn frozen_rows(&self) -> usize {
        if self.latents_updated {
            0
        } else {
            self.context_len
        }
    }
}

/// Builds the decoder mask for `kind` over `context_len` context tokens
/// followed by `target_len` target tokens.
pub fn build_variant_mask(
    kind: AttentionVariant,
    architecture: Architecture,
    context_len: usize,
    target_len: usize,
) -> Result<AttentionVariantMask> {
    if context_len == 0 || target_len == 0 {
        return Err(Error::Config(format!(
            "mask needs context and target tokens, got {context_len} and {target_len}"
        )));
    }
    if architecture == Architecture::DecoderOnly
        && !matches!(kind, AttentionVariant::Full | AttentionVariant::PerPatch)
    {
        return Err(Error::Config(format!(
            "variant `{kind}` is defined for the encoder-decoder decoder only"
        )));
    }
    let (latents_updated, targets_joint) = (kind.latents_updated(), kind.targets_joint());
    let size = context_len + target_len;
    let mut allowed = vec![false; size * size];
    for row in 0..size {
        for col in 0..size {
            let row_ctx = row < context_len;
            let col_ctx = col < context_len;
            allowed[row * size + col] = match (row_ctx, col_ctx) {
                (true, _) if !latents_updated => row == col,
                (true, true) => true,
                (true, false) => targets_joint,
                (false, true) => true,
                (false, false) => targets_joint,
            };
        }
    }
    Ok(AttentionVariantMask {
        size,
        allowed,
        context_len,
        latents_updated,
        targets_joint,
    })
}
