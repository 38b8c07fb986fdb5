//! Finite-difference verification of analytic gradients.
//!
//! `gradcheck` perturbs parameter elements one at a time with central
//! differences and compares the slope against the caller's backward pass.
//! It refuses to run on nondeterministic losses: two evaluations at the
//! same point must agree bit for bit, otherwise finite differences would
//! measure noise instead of gradients.

use std::collections::BTreeMap;

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::derive_rng;

/// Named, element-addressable parameter storage that gradcheck can poke.
pub trait ParamSet {
    fn param_names(&self) -> Vec<String>;
    fn param_numel(&self, name: &str) -> usize;
    fn param_get(&self, name: &str, idx: usize) -> f64;
    fn param_set(&mut self, name: &str, idx: usize, value: f64);
}

impl ParamSet for BTreeMap<String, Tensor> {
    fn param_names(&self) -> Vec<String> {
        self.keys().cloned().collect()
    }

    fn param_numel(&self, name: &str) -> usize {
        self[name].numel()
    }

    fn param_get(&self, name: &str, idx: usize) -> f64 {
        self[name].data()[idx]
    }

    fn param_set(&mut self, name: &str, idx: usize, value: f64) {
        self.get_mut(name).expect("unknown param").data_mut()[idx] = value;
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Check at most this many elements per parameter tensor, sampled
    /// without replacement. `None` checks every element.
    pub max_elements_per_param: Option<usize>,
    /// Seed for the element sampler.
    pub sample_seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_elements_per_param: None,
            sample_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub elements_checked: usize,
    pub params_checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Relative error used throughout: `|fd - an| / max(1, |fd|, |an|)`.
pub fn grad_rel_err(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(1.0)
}

/// Compare analytic gradients against central finite differences.
///
/// `loss_fn` evaluates the scalar loss at the current parameters and must
/// be deterministic; `grad_fn` runs the backward pass and returns one
/// gradient tensor per parameter name.
pub fn gradcheck<S: ParamSet>(
    state: &mut S,
    mut loss_fn: impl FnMut(&mut S) -> Result<f64>,
    mut grad_fn: impl FnMut(&mut S) -> Result<BTreeMap<String, Tensor>>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(opts.step.is_finite() && opts.step > 0.0) {
        return Err(Error::InvalidParameter {
            name: "gradcheck step",
            reason: format!("need a finite positive step, got {}", opts.step),
        });
    }

    let l0 = loss_fn(state)?;
    let l1 = loss_fn(state)?;
    if l0.to_bits() != l1.to_bits() {
        return Err(Error::NonDeterministic(format!(
            "loss changed between evaluations at the same point: {l0:?} vs {l1:?}"
        )));
    }

    let analytic = grad_fn(state)?;
    let names = state.param_names();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        elements_checked: 0,
        params_checked: names.len(),
    };

    for name in &names {
        let grad = analytic.get(name).ok_or_else(|| {
            Error::InvalidInput(format!("gradcheck: backward returned no gradient for {name}"))
        })?;
        let numel = state.param_numel(name);
        if grad.numel() != numel {
            return Err(Error::ShapeMismatch {
                op: "gradcheck",
                left: vec![numel],
                right: grad.shape().to_vec(),
            });
        }
        let indices: Vec<usize> = match opts.max_elements_per_param {
            Some(k) if k < numel => {
                let mut rng = derive_rng(opts.sample_seed, &format!("gradcheck/{name}"));
                let mut picked = sample(&mut rng, numel, k).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..numel).collect(),
        };
        for idx in indices {
            let orig = state.param_get(name, idx);
            state.param_set(name, idx, orig + opts.step);
            let lp = loss_fn(state)?;
            state.param_set(name, idx, orig - opts.step);
            let lm = loss_fn(state)?;
            state.param_set(name, idx, orig);
            let fd = (lp - lm) / (2.0 * opts.step);
            let err = grad_rel_err(fd, grad.data()[idx]);
            report.elements_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = name.clone();
                report.worst_index = idx;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_state(n: usize) -> BTreeMap<String, Tensor> {
        let mut rng = derive_rng(42, "gradcheck-test");
        let mut m = BTreeMap::new();
        m.insert("w".to_string(), Tensor::randn(&[n], 1.0, &mut rng));
        m
    }

    fn sum_sq(s: &mut BTreeMap<String, Tensor>) -> Result<f64> {
        Ok(s["w"].data().iter().map(|&v| v * v).sum())
    }

    fn sum_sq_grad(s: &mut BTreeMap<String, Tensor>) -> Result<BTreeMap<String, Tensor>> {
        let g: Vec<f64> = s["w"].data().iter().map(|&v| 2.0 * v).collect();
        let mut m = BTreeMap::new();
        m.insert("w".to_string(), Tensor::from_vec(&[g.len()], g)?);
        Ok(m)
    }

    #[test]
    fn quadratic_is_near_exact() {
        // central differences are exact for quadratics up to rounding
        let mut s = quadratic_state(17);
        let report = gradcheck(&mut s, sum_sq, sum_sq_grad, &GradCheckOptions::default()).unwrap();
        assert_eq!(report.elements_checked, 17);
        assert!(report.max_rel_err < 1e-9, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn linear_loss_tight() {
        let mut s = quadratic_state(9);
        let report = gradcheck(
            &mut s,
            |s| Ok(s["w"].data().iter().map(|&v| 3.0 * v).sum()),
            |s| {
                let n = s["w"].numel();
                let mut m = BTreeMap::new();
                m.insert("w".to_string(), Tensor::full(&[n], 3.0));
                Ok(m)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-7, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut s = quadratic_state(5);
        let report = gradcheck(
            &mut s,
            sum_sq,
            |s| {
                // deliberately wrong scale
                let g: Vec<f64> = s["w"].data().iter().map(|&v| 3.0 * v).collect();
                let mut m = BTreeMap::new();
                m.insert("w".to_string(), Tensor::from_vec(&[g.len()], g)?);
                Ok(m)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!report.passed(1e-4));
        assert_eq!(report.worst_param, "w");
    }

    #[test]
    fn nondeterministic_loss_is_a_contract_error() {
        let mut s = quadratic_state(3);
        let mut calls = 0u64;
        let err = gradcheck(
            &mut s,
            |_| {
                calls += 1;
                Ok(calls as f64)
            },
            sum_sq_grad,
            &GradCheckOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonDeterministic(_)), "{err}");
    }

    #[test]
    fn element_sampling_bounds_work_and_is_reproducible() {
        let mut s = quadratic_state(100);
        let opts = GradCheckOptions {
            max_elements_per_param: Some(10),
            sample_seed: 7,
            ..GradCheckOptions::default()
        };
        let r1 = gradcheck(&mut s, sum_sq, sum_sq_grad, &opts).unwrap();
        let r2 = gradcheck(&mut s, sum_sq, sum_sq_grad, &opts).unwrap();
        assert_eq!(r1.elements_checked, 10);
        assert_eq!(r1.max_rel_err.to_bits(), r2.max_rel_err.to_bits());
        assert_eq!(r1.worst_index, r2.worst_index);
    }

    #[test]
    fn missing_gradient_entry_errors() {
        let mut s = quadratic_state(3);
        let err = gradcheck(
            &mut s,
            sum_sq,
            |_| Ok(BTreeMap::new()),
            &GradCheckOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("no gradient"), "{err}");
    }
}
