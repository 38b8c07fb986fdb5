//! Forward kernels and their explicit backward companions.
//!
//! Backward functions return input gradients rather than writing through a
//! tape, so every gradient path can be checked against finite differences
//! on its own.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// `c[i,j] = sum_t a[i,t] * b[t,j]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut c = vec![0.0; m * n];
    let b_data = b.data();
    for (a_row, c_row) in a.data().chunks_exact(k).zip(c.chunks_exact_mut(n)) {
        for (t, &a_val) in a_row.iter().enumerate() {
            let b_row = &b_data[t * n..(t + 1) * n];
            for (c_val, &b_val) in c_row.iter_mut().zip(b_row) {
                *c_val += a_val * b_val;
            }
        }
    }
    Ok(Tensor::from_raw(vec![m, n], c))
}

/// Gradients of `matmul`: `dA = dC B^T`, `dB = A^T dC`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, dc: &Tensor) -> Result<(Tensor, Tensor)> {
    let da = matmul(dc, &b.transposed())?;
    let db = matmul(&a.transposed(), dc)?;
    Ok((da, db))
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let (m, n) = (x.rows(), x.cols());
    let mut out = vec![0.0; m * n];
    for (x_row, o_row) in x.data().chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let max = x_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &v) in o_row.iter_mut().zip(x_row) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in o_row.iter_mut() {
            *o /= sum;
        }
    }
    Tensor::from_raw(vec![m, n], out)
}

/// Softmax backward from the forward output `y`:
/// `dx = y ⊙ (dy − <dy, y>)` per row.
pub fn softmax_rows_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let (m, n) = (y.rows(), y.cols());
    debug_assert_eq!(dy.shape(), y.shape());
    let mut dx = vec![0.0; m * n];
    for ((y_row, dy_row), dx_row) in y
        .data()
        .chunks_exact(n)
        .zip(dy.data().chunks_exact(n))
        .zip(dx.chunks_exact_mut(n))
    {
        let dot: f64 = y_row.iter().zip(dy_row).map(|(&yv, &dv)| yv * dv).sum();
        for ((dx_v, &y_v), &dy_v) in dx_row.iter_mut().zip(y_row).zip(dy_row) {
            *dx_v = y_v * (dy_v - dot);
        }
    }
    Tensor::from_raw(vec![m, n], dx)
}

const FRAC_1_SQRT_2PI: f64 = 0.3989422804014327;

/// Exact GeLU `x * Phi(x)` with the Gaussian CDF (not the tanh form).
pub fn gelu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v * gauss_cdf(v)).collect();
    Tensor::from_raw(x.shape().to_vec(), data)
}

/// Analytic GeLU derivative `Phi(x) + x * phi(x)`.
pub fn gelu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    debug_assert_eq!(x.shape(), dy.shape());
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &d)| d * (gauss_cdf(v) + v * gauss_pdf(v)))
        .collect();
    Tensor::from_raw(x.shape().to_vec(), data)
}

fn gauss_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gauss_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Per-row normalization to zero mean and unit variance, then affine.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let (m, d) = (x.rows(), x.cols());
    if gamma.numel() != d || beta.numel() != d {
        return Err(Error::ShapeMismatch {
            op: "layer_norm",
            left: x.shape().to_vec(),
            right: gamma.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * d];
    for (x_row, o_row) in x.data().chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let (mean, inv_std) = row_moments(x_row, eps);
        for ((o, &v), (&g, &b)) in o_row
            .iter_mut()
            .zip(x_row)
            .zip(gamma.data().iter().zip(beta.data()))
        {
            *o = g * (v - mean) * inv_std + b;
        }
    }
    Ok(Tensor::from_raw(vec![m, d], out))
}

/// Gradients of `layer_norm` w.r.t. input, gamma and beta.
pub fn layer_norm_backward(
    x: &Tensor,
    gamma: &Tensor,
    eps: f64,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (m, d) = (x.rows(), x.cols());
    debug_assert_eq!(dy.shape(), x.shape());
    let mut dx = vec![0.0; m * d];
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    for ((x_row, dy_row), dx_row) in x
        .data()
        .chunks_exact(d)
        .zip(dy.data().chunks_exact(d))
        .zip(dx.chunks_exact_mut(d))
    {
        let (mean, inv_std) = row_moments(x_row, eps);
        let mut dxhat = vec![0.0; d];
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for j in 0..d {
            let xhat = (x_row[j] - mean) * inv_std;
            dgamma[j] += dy_row[j] * xhat;
            dbeta[j] += dy_row[j];
            dxhat[j] = dy_row[j] * gamma.data()[j];
            sum_dxhat += dxhat[j];
            sum_dxhat_xhat += dxhat[j] * xhat;
        }
        let inv_d = 1.0 / d as f64;
        for j in 0..d {
            let xhat = (x_row[j] - mean) * inv_std;
            dx_row[j] = inv_std * (dxhat[j] - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
        }
    }
    (
        Tensor::from_raw(vec![m, d], dx),
        Tensor::from_raw(vec![d], dgamma),
        Tensor::from_raw(vec![d], dbeta),
    )
}

fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d;
    (mean, 1.0 / (var + eps).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

/// Per-element scale factors kept for the backward pass. `None` marks the
/// identity path (eval mode or p = 0).
#[derive(Debug, Clone)]
pub struct DropoutMask {
    factors: Option<Vec<f64>>,
}

impl DropoutMask {
    pub fn identity() -> Self {
        Self { factors: None }
    }

    pub fn from_factors(factors: Vec<f64>) -> Self {
        Self {
            factors: Some(factors),
        }
    }

    pub fn factors(&self) -> Option<&[f64]> {
        self.factors.as_deref()
    }

    /// Fraction of kept elements; 1.0 for the identity mask.
    pub fn keep_fraction(&self) -> f64 {
        match &self.factors {
            None => 1.0,
            Some(f) => f.iter().filter(|&&v| v != 0.0).count() as f64 / f.len() as f64,
        }
    }
}

/// Inverted dropout: zero each element with probability `p` and scale
/// survivors by `1/(1-p)`. Eval mode is the exact identity.
pub fn dropout(
    x: &Tensor,
    p: f64,
    mode: DropoutMode,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, DropoutMask)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidParameter {
            name: "dropout_p",
            reason: format!("need 0 <= p < 1, got {p}"),
        });
    }
    if mode == DropoutMode::Eval || p == 0.0 {
        return Ok((x.clone(), DropoutMask::identity()));
    }
    let keep_scale = 1.0 / (1.0 - p);
    let factors: Vec<f64> = x
        .data()
        .iter()
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep_scale })
        .collect();
    let data = x
        .data()
        .iter()
        .zip(&factors)
        .map(|(&v, &f)| v * f)
        .collect();
    Ok((
        Tensor::from_raw(x.shape().to_vec(), data),
        DropoutMask::from_factors(factors),
    ))
}

/// Replay a mask on a (possibly different) tensor of the same shape.
pub fn apply_dropout_mask(x: &Tensor, mask: &DropoutMask) -> Tensor {
    match mask.factors() {
        None => x.clone(),
        Some(f) => {
            debug_assert_eq!(f.len(), x.numel());
            let data = x.data().iter().zip(f).map(|(&v, &m)| v * m).collect();
            Tensor::from_raw(x.shape().to_vec(), data)
        }
    }
}

pub fn dropout_backward(mask: &DropoutMask, dy: &Tensor) -> Tensor {
    apply_dropout_mask(dy, mask)
}

/// `y[i,:] = x[i,:] + b`.
pub fn add_row_bias(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, n) = (x.rows(), x.cols());
    if b.numel() != n {
        return Err(Error::ShapeMismatch {
            op: "add_row_bias",
            left: x.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut data = x.data().to_vec();
    for row in data.chunks_exact_mut(n) {
        for (v, &bv) in row.iter_mut().zip(b.data()) {
            *v += bv;
        }
    }
    Ok(Tensor::from_raw(vec![m, n], data))
}

/// Bias gradient of `add_row_bias`: column sums of `dy`.
pub fn row_bias_backward(dy: &Tensor) -> Tensor {
    let (_, n) = (dy.rows(), dy.cols());
    let mut db = vec![0.0; n];
    for row in dy.data().chunks_exact(n) {
        for (acc, &v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
    Tensor::from_raw(vec![n], db)
}

/// Elementwise sum of two same-shape tensors.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "add",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Ok(Tensor::from_raw(a.shape().to_vec(), data))
}

/// Column means of a 2-d tensor: `[m,n] -> [n]`.
pub fn mean_rows(x: &Tensor) -> Tensor {
    let (m, n) = (x.rows(), x.cols());
    let mut out = vec![0.0; n];
    for row in x.data().chunks_exact(n) {
        for (acc, &v) in out.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let inv = 1.0 / m as f64;
    for v in &mut out {
        *v *= inv;
    }
    Tensor::from_raw(vec![n], out)
}

/// Backward of `mean_rows`: broadcast `dy / m` to every row.
pub fn mean_rows_backward(m: usize, dy: &Tensor) -> Tensor {
    let n = dy.numel();
    let inv = 1.0 / m as f64;
    let mut dx = vec![0.0; m * n];
    for row in dx.chunks_exact_mut(n) {
        for (v, &d) in row.iter_mut().zip(dy.data()) {
            *v = d * inv;
        }
    }
    Tensor::from_raw(vec![m, n], dx)
}
