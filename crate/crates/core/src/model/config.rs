use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    EncoderDecoder,
    DecoderOnly,
}

/// Which decoder attention pattern to use.
///
/// The four kinds are the cells of a 2×2 matrix: whether the context tokens
/// (latents) are updated by the decoder, and whether target tokens attend to
/// each other.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionVariant {
    Full,
    PerPatch,
    FrozenLatents,
    PureCross,
}

impl AttentionVariant {
    pub fn from_flags(latents_updated: bool, targets_joint: bool) -> Self {
        match (latents_updated, targets_joint) {
            (true, true) => Self::Full,
            (true, false) => Self::PerPatch,
            (false, true) => Self::FrozenLatents,
            (false, false) => Self::PureCross,
        }
    }

    pub fn latents_updated(self) -> bool {
        matches!(self, Self::Full | Self::PerPatch)
    }

    pub fn targets_joint(self) -> bool {
        matches!(self, Self::Full | Self::FrozenLatents)
    }
}

impl FromStr for AttentionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "per-patch" => Ok(Self::PerPatch),
            "frozen-latents" => Ok(Self::FrozenLatents),
            "pure-cross" => Ok(Self::PureCross),
            other => Err(Error::Config(format!(
                "unknown attention variant `{other}`"
            ))),
        }
    }
}

impl fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::PerPatch => "per-patch",
            Self::FrozenLatents => "frozen-latents",
            Self::PureCross => "pure-cross",
        })
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::EncoderDecoder => "encoder-decoder",
            Self::DecoderOnly => "decoder-only",
        })
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LvsmConfig {
    pub architecture: Architecture,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub patch_size: usize,
    /// Learned latent tokens; encoder-decoder only.
    pub latent_tokens: usize,
    pub attention: AttentionVariant,
}

impl Default for LvsmConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::DecoderOnly,
            encoder_layers: 0,
            decoder_layers: 6,
            dim: 128,
            heads: 4,
            mlp_ratio: 4,
            patch_size: 4,
            latent_tokens: 0,
            attention: AttentionVariant::Full,
        }
    }
}

impl LvsmConfig {
    /// 12 encoder + 12 decoder layers, d = 768, p = 8, 3072 latents.
    pub fn large_encoder_decoder() -> Self {
        Self {
            architecture: Architecture::EncoderDecoder,
            encoder_layers: 12,
            decoder_layers: 12,
            dim: 768,
            heads: 12,
            mlp_ratio: 4,
            patch_size: 8,
            latent_tokens: 3072,
            attention: AttentionVariant::Full,
        }
    }

    /// 24 layers, d = 768, p = 8.
    pub fn large_decoder_only() -> Self {
        Self {
            architecture: Architecture::DecoderOnly,
            encoder_layers: 0,
            decoder_layers: 24,
            dim: 768,
            heads: 12,
            mlp_ratio: 4,
            patch_size: 8,
            latent_tokens: 0,
            attention: AttentionVariant::Full,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn total_layers(&self) -> usize {
        self.encoder_layers + self.decoder_layers
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.heads == 0 || self.dim == 0 || !self.dim.is_multiple_of(self.heads) {
            return fail(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            ));
        }
        if self.patch_size == 0 || self.mlp_ratio == 0 {
            return fail("patch_size and mlp_ratio must be positive".into());
        }
        match self.architecture {
            Architecture::EncoderDecoder => {
                if self.latent_tokens == 0 {
                    return fail("encoder-decoder needs at least one latent token".into());
                }
            }
            Architecture::DecoderOnly => {
                if self.encoder_layers != 0 || self.latent_tokens != 0 {
                    return fail("decoder-only has no encoder layers or latent tokens".into());
                }
                if !matches!(
                    self.attention,
                    AttentionVariant::Full | AttentionVariant::PerPatch
                ) {
                    return fail(format!(
                        "attention variant `{}` needs latent tokens (encoder-decoder only)",
                        self.attention
                    ));
                }
            }
        }
        Ok(())
    }
}
