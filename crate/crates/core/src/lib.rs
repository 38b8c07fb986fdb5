//! Multiple-instance learning on bags of patch embeddings.
//!
//! A bag is one slide: a `[num_patches, d_kv]` embedding matrix plus a
//! per-patch tissue label and a slide-level binary target. Everything in
//! here — kernels, attention blocks, the optimizer, cross-validation —
//! is deterministic given a master seed, down to the serialized bytes of
//! checkpoints and reports.

pub mod data;
pub mod error;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod rng;

pub use data::{Bag, Manifest, SynthSpec, TissueFractions, TissueLabel};
pub use error::{Error, Result};
pub use model::{AggregatorKind, AttentionConfig, MilModel, ModelConfig};
pub use numerics::{Parameter, Tensor};
pub use pipeline::{crossval, train_task, EvalReport, TrainConfig};
