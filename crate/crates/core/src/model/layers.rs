//! Parameterized layers with explicit forward caches and backward passes.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::ops::{
    add_row_bias, gelu, gelu_backward, layer_norm, layer_norm_backward, matmul, matmul_backward,
    row_bias_backward, softmax_rows, softmax_rows_backward,
};
use crate::numerics::{Parameter, Tensor};

/// Columns `[lo, hi)` of a 2-d tensor as a new tensor.
pub(crate) fn col_slice(x: &Tensor, lo: usize, hi: usize) -> Tensor {
    let (m, n) = (x.rows(), x.cols());
    debug_assert!(lo < hi && hi <= n);
    let w = hi - lo;
    let mut data = Vec::with_capacity(m * w);
    for row in x.data().chunks_exact(n) {
        data.extend_from_slice(&row[lo..hi]);
    }
    Tensor::from_raw(vec![m, w], data)
}

/// Add `src` into columns `[lo, lo+src.cols())` of `dst`.
pub(crate) fn add_into_cols(dst: &mut Tensor, lo: usize, src: &Tensor) {
    let (m, n) = (dst.rows(), dst.cols());
    let w = src.cols();
    debug_assert_eq!(src.rows(), m);
    debug_assert!(lo + w <= n);
    for (drow, srow) in dst
        .data_mut()
        .chunks_exact_mut(n)
        .zip(src.data().chunks_exact(w))
    {
        for (d, &s) in drow[lo..lo + w].iter_mut().zip(srow) {
            *d += s;
        }
    }
}

// ---------------------------------------------------------------------
// Linear

#[derive(Debug, Clone)]
pub struct Linear {
    /// `[in_dim, out_dim]`
    pub w: Parameter,
    pub b: Option<Parameter>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: Parameter::new(Tensor::xavier_uniform(in_dim, out_dim, rng)),
            b: bias.then(|| Parameter::new(Tensor::zeros(&[out_dim]))),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = matmul(x, &self.w.value)?;
        match &self.b {
            Some(b) => add_row_bias(&y, &b.value),
            None => Ok(y),
        }
    }

    /// Accumulates weight/bias gradients, returns the input gradient.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        if let Some(b) = &mut self.b {
            b.accumulate(row_bias_backward(dy).data(), 1.0);
        }
        let (dx, dw) = matmul_backward(x, &self.w.value, dy)?;
        self.w.accumulate(dw.data(), 1.0);
        Ok(dx)
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Parameter)) {
        f(format!("{prefix}.w"), &self.w);
        if let Some(b) = &self.b {
            f(format!("{prefix}.b"), b);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Parameter)) {
        f(format!("{prefix}.w"), &mut self.w);
        if let Some(b) = &mut self.b {
            f(format!("{prefix}.b"), b);
        }
    }
}

// ---------------------------------------------------------------------
// LayerNorm

#[derive(Debug, Clone)]
pub struct LayerNormLayer {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub eps: f64,
}

impl LayerNormLayer {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Parameter::new(Tensor::full(&[dim], 1.0)),
            beta: Parameter::new(Tensor::zeros(&[dim])),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        layer_norm(x, &self.gamma.value, &self.beta.value, self.eps)
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let (dx, dgamma, dbeta) = layer_norm_backward(x, &self.gamma.value, self.eps, dy);
        self.gamma.accumulate(dgamma.data(), 1.0);
        self.beta.accumulate(dbeta.data(), 1.0);
        dx
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Parameter)) {
        f(format!("{prefix}.gamma"), &self.gamma);
        f(format!("{prefix}.beta"), &self.beta);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Parameter)) {
        f(format!("{prefix}.gamma"), &mut self.gamma);
        f(format!("{prefix}.beta"), &mut self.beta);
    }
}

// ---------------------------------------------------------------------
// Scaled dot-product attention primitive

pub(crate) fn sdp_forward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    inv_scale: f64,
) -> Result<(Tensor, Tensor)> {
    let mut scores = matmul(q, &k.transposed())?;
    for s in scores.data_mut() {
        *s *= inv_scale;
    }
    let attn = softmax_rows(&scores);
    let ctx = matmul(&attn, v)?;
    Ok((ctx, attn))
}

pub(crate) fn sdp_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    attn: &Tensor,
    dctx: &Tensor,
    inv_scale: f64,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (dattn, dv) = matmul_backward(attn, v, dctx)?;
    let mut dscores = softmax_rows_backward(attn, &dattn);
    for s in dscores.data_mut() {
        *s *= inv_scale;
    }
    let (dq, dkt) = matmul_backward(q, &k.transposed(), &dscores)?;
    Ok((dq, dkt.transposed(), dv))
}

/// `softmax_rows(Q K^T / sqrt(d)) V` with `d` the shared Q/K width.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    if q.shape().len() != 2 || k.shape().len() != 2 || q.cols() != k.cols() {
        return Err(Error::ShapeMismatch {
            op: "scaled_dot_attention",
            left: q.shape().to_vec(),
            right: k.shape().to_vec(),
        });
    }
    if v.shape().len() != 2 || v.rows() != k.rows() {
        return Err(Error::ShapeMismatch {
            op: "scaled_dot_attention",
            left: k.shape().to_vec(),
            right: v.shape().to_vec(),
        });
    }
    let inv_scale = 1.0 / (q.cols() as f64).sqrt();
    Ok(sdp_forward(q, k, v, inv_scale)?.0)
}

// ---------------------------------------------------------------------
// Multi-head attention (standard; self- or cross- depending on inputs)

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
}

#[derive(Debug, Clone)]
pub struct MhaCache {
    x_q: Tensor,
    x_kv: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    pub(crate) attn: Vec<Tensor>,
    ctx: Tensor,
}

impl MultiHeadAttention {
    pub fn new(d_model: usize, n_heads: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            wq: Linear::new(d_model, d_model, true, rng),
            wk: Linear::new(d_model, d_model, true, rng),
            wv: Linear::new(d_model, d_model, true, rng),
            wo: Linear::new(d_model, d_model, true, rng),
            n_heads,
        }
    }

    pub fn forward(&self, x_q: &Tensor, x_kv: &Tensor) -> Result<(Tensor, MhaCache)> {
        let d = self.wq.in_dim();
        let q = self.wq.forward(x_q)?;
        let k = self.wk.forward(x_kv)?;
        let v = self.wv.forward(x_kv)?;
        let dh = d / self.n_heads;
        let inv_scale = 1.0 / (dh as f64).sqrt();
        let mut ctx = Tensor::zeros(&[x_q.rows(), d]);
        let mut attn = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let (ctx_h, attn_h) = sdp_forward(
                &col_slice(&q, lo, hi),
                &col_slice(&k, lo, hi),
                &col_slice(&v, lo, hi),
                inv_scale,
            )?;
            add_into_cols(&mut ctx, lo, &ctx_h);
            attn.push(attn_h);
        }
        let out = self.wo.forward(&ctx)?;
        let cache = MhaCache {
            x_q: x_q.clone(),
            x_kv: x_kv.clone(),
            q,
            k,
            v,
            attn,
            ctx,
        };
        Ok((out, cache))
    }

    /// Returns `(dx_q, dx_kv)`; callers add them when the two inputs alias.
    pub fn backward(&mut self, cache: &MhaCache, dout: &Tensor) -> Result<(Tensor, Tensor)> {
        let d = self.wq.in_dim();
        let dh = d / self.n_heads;
        let inv_scale = 1.0 / (dh as f64).sqrt();
        let dctx = self.wo.backward(&cache.ctx, dout)?;
        let mut dq = Tensor::zeros(&[cache.q.rows(), d]);
        let mut dk = Tensor::zeros(&[cache.k.rows(), d]);
        let mut dv = Tensor::zeros(&[cache.v.rows(), d]);
        for h in 0..self.n_heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let (dq_h, dk_h, dv_h) = sdp_backward(
                &col_slice(&cache.q, lo, hi),
                &col_slice(&cache.k, lo, hi),
                &col_slice(&cache.v, lo, hi),
                &cache.attn[h],
                &col_slice(&dctx, lo, hi),
                inv_scale,
            )?;
            add_into_cols(&mut dq, lo, &dq_h);
            add_into_cols(&mut dk, lo, &dk_h);
            add_into_cols(&mut dv, lo, &dv_h);
        }
        let dx_q = self.wq.backward(&cache.x_q, &dq)?;
        let mut dx_kv = self.wk.backward(&cache.x_kv, &dk)?;
        let dx_kv_v = self.wv.backward(&cache.x_kv, &dv)?;
        for (a, b) in dx_kv.data_mut().iter_mut().zip(dx_kv_v.data()) {
            *a += b;
        }
        Ok((dx_q, dx_kv))
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Parameter)) {
        self.wq.visit(&format!("{prefix}.wq"), f);
        self.wk.visit(&format!("{prefix}.wk"), f);
        self.wv.visit(&format!("{prefix}.wv"), f);
        self.wo.visit(&format!("{prefix}.wo"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Parameter)) {
        self.wq.visit_mut(&format!("{prefix}.wq"), f);
        self.wk.visit_mut(&format!("{prefix}.wk"), f);
        self.wv.visit_mut(&format!("{prefix}.wv"), f);
        self.wo.visit_mut(&format!("{prefix}.wo"), f);
    }
}

// ---------------------------------------------------------------------
// Asymmetric cross-attention

/// Cross-attention between queries at d_q and patches at d_kv, bridged by
/// bias-free up/down projections:
///
///   softmax((q W_up) patches^T / sqrt(d_kv)) patches W_down
///
/// Heads split the d_kv axis of both the up-projected queries and the
/// patches; the scale stays sqrt(d_kv) regardless of the head count.
#[derive(Debug, Clone)]
pub struct AsymCrossAttention {
    /// `[d_q, d_kv]`
    pub w_up: Parameter,
    /// `[d_kv, d_q]`
    pub w_down: Parameter,
    pub n_heads: usize,
}

#[derive(Debug, Clone)]
pub struct AsymCache {
    q_in: Tensor,
    patches: Tensor,
    up: Tensor,
    pub(crate) attn: Vec<Tensor>,
    ctx: Tensor,
}

impl AsymCrossAttention {
    pub fn new(d_q: usize, d_kv: usize, n_heads: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w_up: Parameter::new(Tensor::xavier_uniform(d_q, d_kv, rng)),
            w_down: Parameter::new(Tensor::xavier_uniform(d_kv, d_q, rng)),
            n_heads,
        }
    }

    pub fn d_kv(&self) -> usize {
        self.w_up.shape()[1]
    }

    /// Pre-residual output `[nq, d_q]`.
    pub fn forward(&self, q: &Tensor, patches: &Tensor) -> Result<(Tensor, AsymCache)> {
        let d_kv = self.d_kv();
        if patches.shape().len() != 2 || patches.cols() != d_kv {
            return Err(Error::ShapeMismatch {
                op: "asymmetric_cross_attention",
                left: vec![self.w_up.shape()[0], d_kv],
                right: patches.shape().to_vec(),
            });
        }
        let up = matmul(q, &self.w_up.value)?;
        let dh = d_kv / self.n_heads;
        let inv_scale = 1.0 / (d_kv as f64).sqrt();
        let mut ctx = Tensor::zeros(&[q.rows(), d_kv]);
        let mut attn = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let (ctx_h, attn_h) = sdp_forward(
                &col_slice(&up, lo, hi),
                &col_slice(patches, lo, hi),
                &col_slice(patches, lo, hi),
                inv_scale,
            )?;
            add_into_cols(&mut ctx, lo, &ctx_h);
            attn.push(attn_h);
        }
        let out = matmul(&ctx, &self.w_down.value)?;
        let cache = AsymCache {
            q_in: q.clone(),
            patches: patches.clone(),
            up,
            attn,
            ctx,
        };
        Ok((out, cache))
    }

    /// Returns `(dq, dpatches)` for the pre-residual output gradient.
    pub fn backward(&mut self, cache: &AsymCache, dout: &Tensor) -> Result<(Tensor, Tensor)> {
        let d_kv = self.d_kv();
        let dh = d_kv / self.n_heads;
        let inv_scale = 1.0 / (d_kv as f64).sqrt();
        let (dctx, dw_down) = matmul_backward(&cache.ctx, &self.w_down.value, dout)?;
        self.w_down.accumulate(dw_down.data(), 1.0);
        let mut dup = Tensor::zeros(&[cache.q_in.rows(), d_kv]);
        let mut dpatches = Tensor::zeros(&[cache.patches.rows(), d_kv]);
        for h in 0..self.n_heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let patches_h = col_slice(&cache.patches, lo, hi);
            let (dq_h, dk_h, dv_h) = sdp_backward(
                &col_slice(&cache.up, lo, hi),
                &patches_h,
                &patches_h,
                &cache.attn[h],
                &col_slice(&dctx, lo, hi),
                inv_scale,
            )?;
            add_into_cols(&mut dup, lo, &dq_h);
            // patches serve as both keys and values
            add_into_cols(&mut dpatches, lo, &dk_h);
            add_into_cols(&mut dpatches, lo, &dv_h);
        }
        let (dq, dw_up) = matmul_backward(&cache.q_in, &self.w_up.value, &dup)?;
        self.w_up.accumulate(dw_up.data(), 1.0);
        Ok((dq, dpatches))
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Parameter)) {
        f(format!("{prefix}.w_up"), &self.w_up);
        f(format!("{prefix}.w_down"), &self.w_down);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Parameter)) {
        f(format!("{prefix}.w_up"), &mut self.w_up);
        f(format!("{prefix}.w_down"), &mut self.w_down);
    }
}

/// The asymmetric cross-attention operation including its residual:
/// output = attention result + q.
pub fn asymmetric_cross_attention(
    q: &Tensor,
    patches: &Tensor,
    layer: &AsymCrossAttention,
) -> Result<Tensor> {
    let (pre, _) = layer.forward(q, patches)?;
    crate::numerics::ops::add(&pre, q)
}

// ---------------------------------------------------------------------
// Feed-forward

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub w1: Linear,
    pub w2: Linear,
}

#[derive(Debug, Clone)]
pub struct FfnCache {
    x: Tensor,
    pre: Tensor,
    act: Tensor,
}

impl FeedForward {
    /// Hidden width 4x, GeLU activation.
    pub fn new(d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w1: Linear::new(d, 4 * d, true, rng),
            w2: Linear::new(4 * d, d, true, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, FfnCache)> {
        let pre = self.w1.forward(x)?;
        let act = gelu(&pre);
        let y = self.w2.forward(&act)?;
        Ok((
            y,
            FfnCache {
                x: x.clone(),
                pre,
                act,
            },
        ))
    }

    pub fn backward(&mut self, cache: &FfnCache, dy: &Tensor) -> Result<Tensor> {
        let dact = self.w2.backward(&cache.act, dy)?;
        let dpre = gelu_backward(&cache.pre, &dact);
        self.w1.backward(&cache.x, &dpre)
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Parameter)) {
        self.w1.visit(&format!("{prefix}.w1"), f);
        self.w2.visit(&format!("{prefix}.w2"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Parameter)) {
        self.w1.visit_mut(&format!("{prefix}.w1"), f);
        self.w2.visit_mut(&format!("{prefix}.w2"), f);
    }
}

// ---------------------------------------------------------------------
// Gated attention pooling

/// Per-patch score `w^T (tanh(V x) * sigmoid(U x))`, softmax over patches,
/// attention-weighted mean embedding.
#[derive(Debug, Clone)]
pub struct GatedAttentionPool {
    pub v: Linear,
    pub u: Linear,
    pub w: Linear,
}

#[derive(Debug, Clone)]
pub struct GatedPoolCache {
    x: Tensor,
    t: Tensor,
    s: Tensor,
    g: Tensor,
    /// `[1, np]`
    pub(crate) attn: Tensor,
}

impl GatedAttentionPool {
    pub fn new(d_kv: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            v: Linear::new(d_kv, hidden, true, rng),
            u: Linear::new(d_kv, hidden, true, rng),
            w: Linear::new(hidden, 1, false, rng),
        }
    }

    /// `[np, d_kv] -> [1, d_kv]`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, GatedPoolCache)> {
        let t = {
            let mut t = self.v.forward(x)?;
            for v in t.data_mut() {
                *v = v.tanh();
            }
            t
        };
        let s = {
            let mut s = self.u.forward(x)?;
            for v in s.data_mut() {
                *v = sigmoid(*v);
            }
            s
        };
        let g_data: Vec<f64> = t.data().iter().zip(s.data()).map(|(&a, &b)| a * b).collect();
        let g = Tensor::from_raw(t.shape().to_vec(), g_data);
        let scores = self.w.forward(&g)?; // [np, 1]
        let attn = softmax_rows(&scores.transposed()); // [1, np]
        let z = matmul(&attn, x)?; // [1, d_kv]
        Ok((
            z,
            GatedPoolCache {
                x: x.clone(),
                t,
                s,
                g,
                attn,
            },
        ))
    }

    /// Returns `dx` for `dz` of shape `[1, d_kv]`.
    pub fn backward(&mut self, cache: &GatedPoolCache, dz: &Tensor) -> Result<Tensor> {
        let (dattn, mut dx) = matmul_backward(&cache.attn, &cache.x, dz)?;
        let dscores = softmax_rows_backward(&cache.attn, &dattn).transposed(); // [np, 1]
        let dg = self.w.backward(&cache.g, &dscores)?;
        // g = t * s with t = tanh(.), s = sigmoid(.)
        let dt: Vec<f64> = dg
            .data()
            .iter()
            .zip(cache.s.data())
            .map(|(&d, &sv)| d * sv)
            .collect();
        let ds: Vec<f64> = dg
            .data()
            .iter()
            .zip(cache.t.data())
            .map(|(&d, &tv)| d * tv)
            .collect();
        let dpre_v: Vec<f64> = dt
            .iter()
            .zip(cache.t.data())
            .map(|(&d, &tv)| d * (1.0 - tv * tv))
            .collect();
        let dpre_u: Vec<f64> = ds
            .iter()
            .zip(cache.s.data())
            .map(|(&d, &sv)| d * sv * (1.0 - sv))
            .collect();
        let shape = cache.t.shape().to_vec();
        let dx_v = self
            .v
            .backward(&cache.x, &Tensor::from_raw(shape.clone(), dpre_v))?;
        let dx_u = self.u.backward(&cache.x, &Tensor::from_raw(shape, dpre_u))?;
        for ((a, &b), &c) in dx.data_mut().iter_mut().zip(dx_v.data()).zip(dx_u.data()) {
            *a += b + c;
        }
        Ok(dx)
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Parameter)) {
        self.v.visit(&format!("{prefix}.v"), f);
        self.u.visit(&format!("{prefix}.u"), f);
        self.w.visit(&format!("{prefix}.w"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Parameter)) {
        self.v.visit_mut(&format!("{prefix}.v"), f);
        self.u.visit_mut(&format!("{prefix}.u"), f);
        self.w.visit_mut(&format!("{prefix}.w"), f);
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
