//! Attention blocks and the four bag aggregators.
//!
//! Every layer keeps its forward intermediates in an explicit cache struct
//! that its backward pass consumes — there is no tape. The same forward
//! code serves training, evaluation, and attention-map inspection.

mod aggregator;
mod blocks;
mod checkpoint;
mod config;
mod layers;

pub use aggregator::{apply_tissue_encoding, AttentionMap, Forward, MilModel};
pub use blocks::{AsymDecoderBlock, DecoderBlock, EncoderBlock};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{
    expected_param_count, AggregatorKind, AttentionConfig, ModelConfig, NormPlacement,
};
pub use layers::{
    asymmetric_cross_attention, scaled_dot_attention, AsymCrossAttention, FeedForward,
    GatedAttentionPool, LayerNormLayer, Linear, MultiHeadAttention,
};
