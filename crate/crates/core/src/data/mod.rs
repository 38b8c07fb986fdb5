//! Bags, the on-disk dataset layout, tissue labeling and sampling rules,
//! and the synthetic generator used by the verification suite.

mod manifest;
mod sample;
mod shard;
mod synth;
mod types;

pub use manifest::{load_manifest, Manifest, ManifestRecord};
pub use sample::{stratified_sample, DEFAULT_TISSUE_RATIOS};
pub use shard::{
    read_embedding_shard, read_tissue_shard, write_embedding_shard, write_tissue_shard,
};
pub use synth::{synth_generate, SynthSpec};
pub use types::{dominant_class, Bag, TissueFractions, TissueLabel};
