//! Encoder-decoder transformer with inference-time head masking.
//!
//! Pre-norm residual blocks, sinusoidal positions, GELU feed-forward layers
//! and a shared token embedding for encoder and decoder inputs.

mod config;
mod decoder;
mod encoder;
mod mask;
pub(crate) mod ops;
mod params;

pub use config::ModelConfig;
pub use decoder::{decode_step, uniform_attention_decode_step, AttentionTrace, CrossAttention, DecoderState};
pub use encoder::{encode, EncoderStates};
pub use mask::{attention, HeadMaskConfig, HeadMaskVector};
pub use params::{Layout, LinearSlots, ModelParams, NormSlots, Slot};

pub(crate) use encoder::{check_tokens, encoder_forward, feed_forward, multi_head, AttnCache, EncoderCache, FfCache};
pub(crate) use mask::HeadView;
pub(crate) use params::{AttnSlots, FfSlots};
