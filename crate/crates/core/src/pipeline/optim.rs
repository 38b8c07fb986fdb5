//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::numerics::{Parameter, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct AdamWParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWParams {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: String| Error::InvalidParameter { name, reason };
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(bad("lr", format!("need a finite positive rate, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(bad(name, format!("need 0 <= beta < 1, got {b}")));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(bad("eps", format!("need a positive eps, got {}", self.eps)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(bad(
                "weight_decay",
                format!("need a non-negative decay, got {}", self.weight_decay),
            ));
        }
        Ok(())
    }
}

/// One optimizer step on a single parameter. `t` is the 1-based step count
/// shared by all parameters; it drives the bias correction.
///
/// Decay is decoupled: `w -= lr * wd * w`, applied alongside the moment
/// update (the two terms do not interact). A parameter whose gradient was
/// never touched skips the moment update entirely — with zero decay the
/// step is then an exact no-op.
pub fn adamw_step(p: &mut Parameter, t: usize, o: &AdamWParams) -> Result<()> {
    o.validate()?;
    if t == 0 {
        return Err(Error::OptimizerState {
            name: "t".into(),
            reason: "step counts are 1-based".into(),
        });
    }
    if o.weight_decay != 0.0 {
        let f = o.lr * o.weight_decay;
        for w in p.value.data_mut() {
            *w -= f * *w;
        }
    }
    let Parameter {
        value,
        accumulated_grad,
        adam_m,
        adam_v,
    } = p;
    let Some(grad) = accumulated_grad.as_ref() else {
        return Ok(());
    };
    let m = adam_m.get_or_insert_with(|| Tensor::zeros(value.shape()));
    let v = adam_v.get_or_insert_with(|| Tensor::zeros(value.shape()));
    let bc1 = 1.0 - o.beta1.powi(t as i32);
    let bc2 = 1.0 - o.beta2.powi(t as i32);
    for (((w, &g), m), v) in value
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.data_mut())
        .zip(v.data_mut())
    {
        *m = o.beta1 * *m + (1.0 - o.beta1) * g;
        *v = o.beta2 * *v + (1.0 - o.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w -= o.lr * m_hat / (v_hat.sqrt() + o.eps);
    }
    Ok(())
}
