//! Shared fixtures for the criterion benchmarks.
//!
//! Widths follow the embedding scales the aggregators are meant for
//! (768 and 1536); bags are kept small enough that a full suite run
//! finishes in minutes.

use rand_chacha::ChaCha8Rng;

use slidemil::numerics::Tensor;
use slidemil::rng::derive_rng;
use slidemil::{AggregatorKind, MilModel, ModelConfig, TissueLabel};

pub const WIDTHS: [usize; 2] = [768, 1536];

pub fn fixture_rng(label: &str) -> ChaCha8Rng {
    derive_rng(0, &format!("bench/{label}"))
}

/// A synthetic bag: unit-variance patches plus a cycling tissue labeling.
pub fn bench_bag(np: usize, d_kv: usize) -> (Tensor, Vec<TissueLabel>) {
    let mut rng = fixture_rng(&format!("bag/{np}x{d_kv}"));
    let x = Tensor::randn(&[np, d_kv], 1.0, &mut rng);
    let labels = (0..np)
        .map(|i| TissueLabel::ALL[i % TissueLabel::ALL.len()])
        .collect();
    (x, labels)
}

pub fn bench_model(kind: AggregatorKind, d_kv: usize) -> MilModel {
    let config = ModelConfig::new(kind, d_kv);
    let mut rng = fixture_rng(&format!("model/{}/{d_kv}", kind.name()));
    MilModel::new(config, &mut rng).expect("bench config is valid")
}
