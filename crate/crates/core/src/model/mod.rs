//! Transformer architectures: encoder-decoder with learned latent tokens and
//! single-stream decoder-only, plus the decoder attention ablations.

mod checkpoint;
mod config;
mod forward;
mod mask;
mod params;

pub use checkpoint::{
    read_checkpoint, write_checkpoint, CheckpointHeader, NamedTensors, TrainCounters,
};
pub use config::{Architecture, AttentionVariant, LvsmConfig};
pub use forward::{
    bind_params, decode_from_latents, decode_latents_on_tape, decoder_only_on_tape, encode_latents,
    encode_on_tape, forward_decoder_only, forward_encoder_decoder, prepare_inputs, prepare_target,
    render_on_tape, synthesize_view, synthesize_views, transformer_layer,
    transformer_layer_on_tape, BoundParams, PreparedInputs,
};
pub use mask::{build_variant_mask, AttentionVariantMask};
pub use params::{
    init_weights, is_layer_norm_gain, layer_init_std, LayerParams, LvsmParams, LvsmWeights,
    BASE_INIT_STD,
};
