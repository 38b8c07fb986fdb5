//! Dense row-major f64 tensor and the per-parameter optimizer state.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Dense n-dimensional array of 64-bit floats, row-major, with an optional
/// gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Build from external data. Rejects shape/length disagreement and any
    /// non-finite element.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::from_vec",
                left: shape.to_vec(),
                right: vec![data.len()],
            });
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite element at flat index {bad} in tensor of shape {shape:?}"
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
            grad: None,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
            grad: None,
        }
    }

    /// Internal constructor for kernel outputs; skips the finiteness scan.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data,
            grad: None,
        }
    }

    /// Zero-mean Gaussian entries with the given standard deviation.
    pub fn randn(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| std * sample_standard_normal(rng)).collect();
        Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        }
    }

    /// Xavier-uniform init for a `[fan_in, fan_out]` projection.
    pub fn xavier_uniform(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let numel = fan_in * fan_out;
        let data = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
        Self {
            shape: vec![fan_in, fan_out],
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row count for a 2-d tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() needs a 2-d tensor");
        self.shape[0]
    }

    /// Column count for a 2-d tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() needs a 2-d tensor");
        self.shape[1]
    }

    /// Row `i` of a 2-d tensor as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.cols();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.cols();
        &mut self.data[i * n..(i + 1) * n]
    }

    /// 2-d transpose.
    pub fn transposed(&self) -> Tensor {
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::from_raw(vec![n, m], out)
    }

    /// Attach a gradient buffer. Must match the tensor's shape.
    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::set_grad",
                left: self.shape.clone(),
                right: vec![grad.len()],
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn sample_standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; two uniforms per draw, second half discarded for a
    // branch-free deterministic stream.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// One learnable tensor plus its accumulated gradient and AdamW moments.
/// Gradient and moment buffers are allocated lazily so that inference-only
/// and count-only uses of large models pay for values alone.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub value: Tensor,
    pub accumulated_grad: Option<Tensor>,
    pub adam_m: Option<Tensor>,
    pub adam_v: Option<Tensor>,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        Self {
            value,
            accumulated_grad: None,
            adam_m: None,
            adam_v: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.accumulated_grad {
            for v in g.data_mut() {
                *v = 0.0;
            }
        }
    }

    /// Add `scale * grad` into the accumulated gradient, allocating it on
    /// first use.
    pub fn accumulate(&mut self, grad: &[f64], scale: f64) {
        debug_assert_eq!(grad.len(), self.numel());
        let acc = self
            .accumulated_grad
            .get_or_insert_with(|| Tensor::zeros(self.value.shape()));
        for (a, g) in acc.data_mut().iter_mut().zip(grad) {
            *a += scale * g;
        }
    }

    /// Accumulated gradient as a slice; zeros are represented by `None`.
    pub fn grad(&self) -> Option<&[f64]> {
        self.accumulated_grad.as_ref().map(|t| t.data())
    }

    /// AdamW moment buffers, allocating on first use.
    pub fn adam_state(&mut self) -> (&mut Tensor, &mut Tensor) {
        let shape = self.value.shape().to_vec();
        if self.adam_m.is_none() {
            self.adam_m = Some(Tensor::zeros(&shape));
        }
        if self.adam_v.is_none() {
            self.adam_v = Some(Tensor::zeros(&shape));
        }
        (
            self.adam_m.as_mut().unwrap(),
            self.adam_v.as_mut().unwrap(),
        )
    }
}
