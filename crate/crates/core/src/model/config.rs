use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    /// Decoder with learned queries at d_q and asymmetric cross-attention
    /// into patches at d_kv.
    AsymTransDec,
    /// Traditional decoder: learned queries lifted to d_kv, standard
    /// cross-attention.
    TransDec,
    /// Encoder: self-attention over patch tokens at d_kv.
    TransEnc,
    /// Gated attention pooling over patches.
    Abmil,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 4] = [
        AggregatorKind::AsymTransDec,
        AggregatorKind::TransDec,
        AggregatorKind::TransEnc,
        AggregatorKind::Abmil,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::AsymTransDec => "asym_trans_dec",
            AggregatorKind::TransDec => "trans_dec",
            AggregatorKind::TransEnc => "trans_enc",
            AggregatorKind::Abmil => "abmil",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter {
                name: "aggregator",
                reason: format!(
                    "unknown aggregator '{s}' (expected one of: {})",
                    Self::ALL.map(|k| k.name()).join(", ")
                ),
            })
    }
}

impl std::fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPlacement {
    /// norm -> sublayer -> add (trains without warmup).
    #[default]
    Pre,
    /// sublayer -> add -> norm.
    Post,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    /// Patch-embedding dimension (1536 ViT / 768 CNN, smaller for tests).
    pub d_kv: usize,
    /// Query/model dimension of the asymmetric decoder.
    #[serde(default = "default_d_q")]
    pub d_q: usize,
    #[serde(default = "default_n_heads")]
    pub n_heads: usize,
    /// Learned query token count (decoder variants).
    #[serde(default = "default_n_queries")]
    pub n_queries: usize,
    /// Block count.
    #[serde(default = "default_n_layers")]
    pub n_layers: usize,
    /// Dropout before the classifier.
    #[serde(default = "default_dropout_p")]
    pub dropout_p: f64,
}

fn default_d_q() -> usize {
    64
}
fn default_n_heads() -> usize {
    2
}
fn default_n_queries() -> usize {
    16
}
fn default_n_layers() -> usize {
    1
}
fn default_dropout_p() -> f64 {
    0.5
}

impl AttentionConfig {
    pub fn new(d_kv: usize) -> Self {
        Self {
            d_kv,
            d_q: default_d_q(),
            n_heads: default_n_heads(),
            n_queries: default_n_queries(),
            n_layers: default_n_layers(),
            dropout_p: default_dropout_p(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub aggregator: AggregatorKind,
    pub attention: AttentionConfig,
    /// Include the feed-forward sublayer in each block.
    #[serde(default = "default_true")]
    pub use_ffn: bool,
    #[serde(default)]
    pub norm_placement: NormPlacement,
    /// Add the learned per-tissue-class encoding to patch embeddings.
    #[serde(default = "default_true")]
    pub use_tissue_encoding: bool,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn new(aggregator: AggregatorKind, d_kv: usize) -> Self {
        Self {
            aggregator,
            attention: AttentionConfig::new(d_kv),
            use_ffn: true,
            norm_placement: NormPlacement::Pre,
            use_tissue_encoding: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.attention;
        let bad = |name: &'static str, reason: String| Err(Error::InvalidParameter { name, reason });
        if a.d_kv == 0 || a.d_q == 0 {
            return bad("dims", format!("d_kv={} d_q={} must be >= 1", a.d_kv, a.d_q));
        }
        if a.n_heads == 0 {
            return bad("n_heads", "need at least one head".into());
        }
        if a.n_queries == 0 || a.n_layers == 0 {
            return bad(
                "attention",
                format!("n_queries={} n_layers={} must be >= 1", a.n_queries, a.n_layers),
            );
        }
        if !(0.0..1.0).contains(&a.dropout_p) {
            return bad("dropout_p", format!("{} outside [0,1)", a.dropout_p));
        }
        let needs_dq_split = matches!(
            self.aggregator,
            AggregatorKind::AsymTransDec | AggregatorKind::TransDec | AggregatorKind::TransEnc
        );
        if needs_dq_split {
            if self.aggregator == AggregatorKind::AsymTransDec && a.d_q % a.n_heads != 0 {
                return bad(
                    "n_heads",
                    format!("d_q={} not divisible by n_heads={}", a.d_q, a.n_heads),
                );
            }
            if a.d_kv % a.n_heads != 0 {
                return bad(
                    "n_heads",
                    format!("d_kv={} not divisible by n_heads={}", a.d_kv, a.n_heads),
                );
            }
        }
        Ok(())
    }
}

/// Closed-form trainable-parameter counts. Kept separate from the model's
/// own accounting so tests can pit the two against each other.
pub fn expected_param_count(config: &ModelConfig) -> usize {
    let a = &config.attention;
    let (d_q, d_kv, nq, l) = (a.d_q, a.d_kv, a.n_queries, a.n_layers);
    let attn = |d: usize| 4 * d * d + 4 * d; // Wq,Wk,Wv,Wo with biases
    let ffn = |d: usize| if config.use_ffn { 8 * d * d + 5 * d } else { 0 };
    let norm = |d: usize| 2 * d;
    let ffn_norms = usize::from(config.use_ffn);

    let body = match config.aggregator {
        AggregatorKind::AsymTransDec => {
            let block = attn(d_q) + 2 * d_q * d_kv + ffn(d_q) + (2 + ffn_norms) * norm(d_q);
            nq * d_q + l * block + (d_q + 1)
        }
        AggregatorKind::TransDec => {
            let block = 2 * attn(d_kv) + ffn(d_kv) + (2 + ffn_norms) * norm(d_kv);
            nq * d_kv + l * block + (d_kv + 1)
        }
        AggregatorKind::TransEnc => {
            let block = attn(d_kv) + ffn(d_kv) + (1 + ffn_norms) * norm(d_kv);
            l * block + (d_kv + 1)
        }
        AggregatorKind::Abmil => 2 * (d_kv * d_q + d_q) + d_q + (d_kv + 1),
    };
    let tissue = if config.use_tissue_encoding { 3 * d_kv } else { 0 };
    body + tissue
}
