//! Transformer blocks: residual wiring around the attention/FFN sublayers.
//!
//! Pre-norm: `y = x + sublayer(norm(x))`. Post-norm: `y = norm(x + sublayer(x))`.
//! Patch embeddings entering cross-attention are used as-is; the norms act on
//! the query stream only.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::config::NormPlacement;
use crate::model::layers::{
    AsymCache, AsymCrossAttention, FeedForward, FfnCache, LayerNormLayer, MhaCache,
    MultiHeadAttention,
};
use crate::numerics::ops::add;
use crate::numerics::{Parameter, Tensor};

// ---------------------------------------------------------------------
// Asymmetric decoder block (queries at d_q, patches at d_kv)

#[derive(Debug, Clone)]
pub struct AsymDecoderBlock {
    pub norm1: LayerNormLayer,
    pub self_attn: MultiHeadAttention,
    pub norm2: LayerNormLayer,
    pub cross: AsymCrossAttention,
    pub norm3: Option<LayerNormLayer>,
    pub ffn: Option<FeedForward>,
    pub placement: NormPlacement,
}

#[derive(Debug, Clone)]
pub struct AsymBlockCache {
    n1_in: Tensor,
    pub(crate) self_cache: MhaCache,
    n2_in: Tensor,
    pub(crate) cross_cache: AsymCache,
    n3_in: Option<Tensor>,
    ffn_cache: Option<FfnCache>,
}

impl AsymDecoderBlock {
    pub fn new(
        d_q: usize,
        d_kv: usize,
        n_heads: usize,
        use_ffn: bool,
        placement: NormPlacement,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            norm1: LayerNormLayer::new(d_q),
            self_attn: MultiHeadAttention::new(d_q, n_heads, rng),
            norm2: LayerNormLayer::new(d_q),
            cross: AsymCrossAttention::new(d_q, d_kv, n_heads, rng),
            norm3: use_ffn.then(|| LayerNormLayer::new(d_q)),
            ffn: use_ffn.then(|| FeedForward::new(d_q, rng)),
            placement,
        }
    }

    pub fn forward(&self, q_in: &Tensor, patches: &Tensor) -> Result<(Tensor, AsymBlockCache)> {
        let (x1, self_cache, n1_in) = match self.placement {
            NormPlacement::Pre => {
                let n = self.norm1.forward(q_in)?;
                let (s, c) = self.self_attn.forward(&n, &n)?;
                (add(q_in, &s)?, c, q_in.clone())
            }
            NormPlacement::Post => {
                let (s, c) = self.self_attn.forward(q_in, q_in)?;
                let r = add(q_in, &s)?;
                (self.norm1.forward(&r)?, c, r)
            }
        };
        let (x2, cross_cache, n2_in) = match self.placement {
            NormPlacement::Pre => {
                let n = self.norm2.forward(&x1)?;
                let (s, c) = self.cross.forward(&n, patches)?;
                (add(&x1, &s)?, c, x1)
            }
            NormPlacement::Post => {
                let (s, c) = self.cross.forward(&x1, patches)?;
                let r = add(&x1, &s)?;
                (self.norm2.forward(&r)?, c, r)
            }
        };
        let (out, ffn_cache, n3_in) = match (&self.ffn, &self.norm3) {
            (Some(ffn), Some(norm3)) => match self.placement {
                NormPlacement::Pre => {
                    let n = norm3.forward(&x2)?;
                    let (s, c) = ffn.forward(&n)?;
                    (add(&x2, &s)?, Some(c), Some(x2))
                }
                NormPlacement::Post => {
                    let (s, c) = ffn.forward(&x2)?;
                    let r = add(&x2, &s)?;
                    (norm3.forward(&r)?, Some(c), Some(r))
                }
            },
            _ => (x2, None, None),
        };
        Ok((
            out,
            AsymBlockCache {
                n1_in,
                self_cache,
                n2_in,
                cross_cache,
                n3_in,
                ffn_cache,
            },
        ))
    }

    /// Returns `(dq_in, dpatches)`.
    pub fn backward(
        &mut self,
        cache: &AsymBlockCache,
        dout: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let dx2 = match (&mut self.ffn, &mut self.norm3) {
            (Some(ffn), Some(norm3)) => {
                let (ffn_cache, n3_in) =
                    (cache.ffn_cache.as_ref().unwrap(), cache.n3_in.as_ref().unwrap());
                match self.placement {
                    NormPlacement::Pre => {
                        let dn = ffn.backward(ffn_cache, dout)?;
                        add(dout, &norm3.backward(n3_in, &dn))?
                    }
                    NormPlacement::Post => {
                        let dr = norm3.backward(n3_in, dout);
                        add(&dr, &ffn.backward(ffn_cache, &dr)?)?
                    }
                }
            }
            _ => dout.clone(),
        };
        let (dx1, dpatches) = match self.placement {
            NormPlacement::Pre => {
                let (dnq, dpatches) = self.cross.backward(&cache.cross_cache, &dx2)?;
                (
                    add(&dx2, &self.norm2.backward(&cache.n2_in, &dnq))?,
                    dpatches,
                )
            }
            NormPlacement::Post => {
                let dr = self.norm2.backward(&cache.n2_in, &dx2);
                let (dq_sub, dpatches) = self.cross.backward(&cache.cross_cache, &dr)?;
                (add(&dr, &dq_sub)?, dpatches)
            }
        };
        let dq_in = match self.placement {
            NormPlacement::Pre => {
                let (da, db) = self.self_attn.backward(&cache.self_cache, &dx1)?;
                let dn = add(&da, &db)?;
                add(&dx1, &self.norm1.backward(&cache.n1_in, &dn))?
            }
            NormPlacement::Post => {
                let dr = self.norm1.backward(&cache.n1_in, &dx1);
                let (da, db) = self.self_attn.backward(&cache.self_cache, &dr)?;
                add(&add(&dr, &da)?, &db)?
            }
        };
        Ok((dq_in, dpatches))
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Parameter)) {
        self.norm1.visit(&format!("{prefix}.norm1"), f);
        self.self_attn.visit(&format!("{prefix}.self_attn"), f);
        self.norm2.visit(&format!("{prefix}.norm2"), f);
        self.cross.visit(&format!("{prefix}.cross"), f);
        if let Some(n) = &self.norm3 {
            n.visit(&format!("{prefix}.norm3"), f);
        }
        if let Some(ffn) = &self.ffn {
            ffn.visit(&format!("{prefix}.ffn"), f);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Parameter)) {
        self.norm1.visit_mut(&format!("{prefix}.norm1"), f);
        self.self_attn.visit_mut(&format!("{prefix}.self_attn"), f);
        self.norm2.visit_mut(&format!("{prefix}.norm2"), f);
        self.cross.visit_mut(&format!("{prefix}.cross"), f);
        if let Some(n) = &mut self.norm3 {
            n.visit_mut(&format!("{prefix}.norm3"), f);
        }
        if let Some(ffn) = &mut self.ffn {
            ffn.visit_mut(&format!("{prefix}.ffn"), f);
        }
    }
}

// ---------------------------------------------------------------------
// Standard decoder block (everything at d_kv; queries lifted beforehand)

#[derive(Debug, Clone)]
pub struct DecoderBlock {
    pub norm1: LayerNormLayer,
    pub self_attn: MultiHeadAttention,
    pub norm2: LayerNormLayer,
    pub cross_attn: MultiHeadAttention,
    pub norm3: Option<LayerNormLayer>,
    pub ffn: Option<FeedForward>,
    pub placement: NormPlacement,
}

#[derive(Debug, Clone)]
pub struct DecoderBlockCache {
    n1_in: Tensor,
    pub(crate) self_cache: MhaCache,
    n2_in: Tensor,
    pub(crate) cross_cache: MhaCache,
    n3_in: Option<Tensor>,
    ffn_cache: Option<FfnCache>,
}

impl DecoderBlock {
    pub fn new(
        d_kv: usize,
        n_heads: usize,
        use_ffn: bool,
        placement: NormPlacement,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            norm1: LayerNormLayer::new(d_kv),
            self_attn: MultiHeadAttention::new(d_kv, n_heads, rng),
            norm2: LayerNormLayer::new(d_kv),
            cross_attn: MultiHeadAttention::new(d_kv, n_heads, rng),
            norm3: use_ffn.then(|| LayerNormLayer::new(d_kv)),
            ffn: use_ffn.then(|| FeedForward::new(d_kv, rng)),
            placement,
        }
    }

    pub fn forward(&self, q_in: &Tensor, patches: &Tensor) -> Result<(Tensor, DecoderBlockCache)> {
        let (x1, self_cache, n1_in) = match self.placement {
            NormPlacement::Pre => {
                let n = self.norm1.forward(q_in)?;
                let (s, c) = self.self_attn.forward(&n, &n)?;
                (add(q_in, &s)?, c, q_in.clone())
            }
            NormPlacement::Post => {
                let (s, c) = self.self_attn.forward(q_in, q_in)?;
                let r = add(q_in, &s)?;
                (self.norm1.forward(&r)?, c, r)
            }
        };
        let (x2, cross_cache, n2_in) = match self.placement {
            NormPlacement::Pre => {
                let n = self.norm2.forward(&x1)?;
                let (s, c) = self.cross_attn.forward(&n, patches)?;
                (add(&x1, &s)?, c, x1)
            }
            NormPlacement::Post => {
                let (s, c) = self.cross_attn.forward(&x1, patches)?;
                let r = add(&x1, &s)?;
                (self.norm2.forward(&r)?, c, r)
            }
        };
        let (out, ffn_cache, n3_in) = match (&self.ffn, &self.norm3) {
            (Some(ffn), Some(norm3)) => match self.placement {
                NormPlacement::Pre => {
                    let n = norm3.forward(&x2)?;
                    let (s, c) = ffn.forward(&n)?;
                    (add(&x2, &s)?, Some(c), Some(x2))
                }
                NormPlacement::Post => {
                    let (s, c) = ffn.forward(&x2)?;
                    let r = add(&x2, &s)?;
                    (norm3.forward(&r)?, Some(c), Some(r))
                }
            },
            _ => (x2, None, None),
        };
        Ok((
            out,
            DecoderBlockCache {
                n1_in,
                self_cache,
                n2_in,
                cross_cache,
                n3_in,
                ffn_cache,
            },
        ))
    }

    /// Returns `(dq_in, dpatches)`.
    pub fn backward(
        &mut self,
        cache: &DecoderBlockCache,
        dout: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let dx2 = match (&mut self.ffn, &mut self.norm3) {
            (Some(ffn), Some(norm3)) => {
                let (ffn_cache, n3_in) =
                    (cache.ffn_cache.as_ref().unwrap(), cache.n3_in.as_ref().unwrap());
                match self.placement {
                    NormPlacement::Pre => {
                        let dn = ffn.backward(ffn_cache, dout)?;
                        add(dout, &norm3.backward(n3_in, &dn))?
                    }
                    NormPlacement::Post => {
                        let dr = norm3.backward(n3_in, dout);
                        add(&dr, &ffn.backward(ffn_cache, &dr)?)?
                    }
                }
            }
            _ => dout.clone(),
        };
        let (dx1, dpatches) = match self.placement {
            NormPlacement::Pre => {
                let (dnq, dpatches) = self.cross_attn.backward(&cache.cross_cache, &dx2)?;
                (
                    add(&dx2, &self.norm2.backward(&cache.n2_in, &dnq))?,
                    dpatches,
                )
            }
            NormPlacement::Post => {
                let dr = self.norm2.backward(&cache.n2_in, &dx2);
                let (dq_sub, dpatches) = self.cross_attn.backward(&cache.cross_cache, &dr)?;
                (add(&dr, &dq_sub)?, dpatches)
            }
        };
        let dq_in = match self.placement {
            NormPlacement::Pre => {
                let (da, db) = self.self_attn.backward(&cache.self_cache, &dx1)?;
                let dn = add(&da, &db)?;
                add(&dx1, &self.norm1.backward(&cache.n1_in, &dn))?
            }
            NormPlacement::Post => {
                let dr = self.norm1.backward(&cache.n1_in, &dx1);
                let (da, db) = self.self_attn.backward(&cache.self_cache, &dr)?;
                add(&add(&dr, &da)?, &db)?
            }
        };
        Ok((dq_in, dpatches))
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Parameter)) {
        self.norm1.visit(&format!("{prefix}.norm1"), f);
        self.self_attn.visit(&format!("{prefix}.self_attn"), f);
        self.norm2.visit(&format!("{prefix}.norm2"), f);
        self.cross_attn.visit(&format!("{prefix}.cross_attn"), f);
        if let Some(n) = &self.norm3 {
            n.visit(&format!("{prefix}.norm3"), f);
        }
        if let Some(ffn) = &self.ffn {
            ffn.visit(&format!("{prefix}.ffn"), f);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Parameter)) {
        self.norm1.visit_mut(&format!("{prefix}.norm1"), f);
        self.self_attn.visit_mut(&format!("{prefix}.self_attn"), f);
        self.norm2.visit_mut(&format!("{prefix}.norm2"), f);
        self.cross_attn.visit_mut(&format!("{prefix}.cross_attn"), f);
        if let Some(n) = &mut self.norm3 {
            n.visit_mut(&format!("{prefix}.norm3"), f);
        }
        if let Some(ffn) = &mut self.ffn {
            ffn.visit_mut(&format!("{prefix}.ffn"), f);
        }
    }
}

// ---------------------------------------------------------------------
// Encoder block (self-attention over patch tokens at d_kv)

#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub norm1: LayerNormLayer,
    pub self_attn: MultiHeadAttention,
    pub norm2: Option<LayerNormLayer>,
    pub ffn: Option<FeedForward>,
    pub placement: NormPlacement,
}

#[derive(Debug, Clone)]
pub struct EncoderBlockCache {
    n1_in: Tensor,
    pub(crate) self_cache: MhaCache,
    n2_in: Option<Tensor>,
    ffn_cache: Option<FfnCache>,
}

impl EncoderBlock {
    pub fn new(
        d_kv: usize,
        n_heads: usize,
        use_ffn: bool,
        placement: NormPlacement,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            norm1: LayerNormLayer::new(d_kv),
            self_attn: MultiHeadAttention::new(d_kv, n_heads, rng),
            norm2: use_ffn.then(|| LayerNormLayer::new(d_kv)),
            ffn: use_ffn.then(|| FeedForward::new(d_kv, rng)),
            placement,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, EncoderBlockCache)> {
        let (x1, self_cache, n1_in) = match self.placement {
            NormPlacement::Pre => {
                let n = self.norm1.forward(x)?;
                let (s, c) = self.self_attn.forward(&n, &n)?;
                (add(x, &s)?, c, x.clone())
            }
            NormPlacement::Post => {
                let (s, c) = self.self_attn.forward(x, x)?;
                let r = add(x, &s)?;
                (self.norm1.forward(&r)?, c, r)
            }
        };
        let (out, ffn_cache, n2_in) = match (&self.ffn, &self.norm2) {
            (Some(ffn), Some(norm2)) => match self.placement {
                NormPlacement::Pre => {
                    let n = norm2.forward(&x1)?;
                    let (s, c) = ffn.forward(&n)?;
                    (add(&x1, &s)?, Some(c), Some(x1))
                }
                NormPlacement::Post => {
                    let (s, c) = ffn.forward(&x1)?;
                    let r = add(&x1, &s)?;
                    (norm2.forward(&r)?, Some(c), Some(r))
                }
            },
            _ => (x1, None, None),
        };
        Ok((
            out,
            EncoderBlockCache {
                n1_in,
                self_cache,
                n2_in,
                ffn_cache,
            },
        ))
    }

    pub fn backward(&mut self, cache: &EncoderBlockCache, dout: &Tensor) -> Result<Tensor> {
        let dx1 = match (&mut self.ffn, &mut self.norm2) {
            (Some(ffn), Some(norm2)) => {
                let (ffn_cache, n2_in) =
                    (cache.ffn_cache.as_ref().unwrap(), cache.n2_in.as_ref().unwrap());
                match self.placement {
                    NormPlacement::Pre => {
                        let dn = ffn.backward(ffn_cache, dout)?;
                        add(dout, &norm2.backward(n2_in, &dn))?
                    }
                    NormPlacement::Post => {
                        let dr = norm2.backward(n2_in, dout);
                        add(&dr, &ffn.backward(ffn_cache, &dr)?)?
                    }
                }
            }
            _ => dout.clone(),
        };
        match self.placement {
            NormPlacement::Pre => {
                let (da, db) = self.self_attn.backward(&cache.self_cache, &dx1)?;
                let dn = add(&da, &db)?;
                add(&dx1, &self.norm1.backward(&cache.n1_in, &dn))
            }
            NormPlacement::Post => {
                let dr = self.norm1.backward(&cache.n1_in, &dx1);
                let (da, db) = self.self_attn.backward(&cache.self_cache, &dr)?;
                add(&add(&dr, &da)?, &db)
            }
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Parameter)) {
        self.norm1.visit(&format!("{prefix}.norm1"), f);
        self.self_attn.visit(&format!("{prefix}.self_attn"), f);
        if let Some(n) = &self.norm2 {
            n.visit(&format!("{prefix}.norm2"), f);
        }
        if let Some(ffn) = &self.ffn {
            ffn.visit(&format!("{prefix}.ffn"), f);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Parameter)) {
        self.norm1.visit_mut(&format!("{prefix}.norm1"), f);
        self.self_attn.visit_mut(&format!("{prefix}.self_attn"), f);
        if let Some(n) = &mut self.norm2 {
            n.visit_mut(&format!("{prefix}.norm2"), f);
        }
        if let Some(ffn) = &mut self.ffn {
            ffn.visit_mut(&format!("{prefix}.ffn"), f);
        }
    }
}
