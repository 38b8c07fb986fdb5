//! Binary cross-entropy on logits, in the overflow-safe form.

/// Returns `(loss, dloss/dlogit)` for a single bag.
///
/// `loss = pos_weight * y * softplus(-x) + (1 - y) * softplus(x)` with
/// `softplus(x) = max(x, 0) + ln(1 + e^{-|x|})`, which never overflows.
/// At `pos_weight = 1` the gradient reduces to `sigmoid(x) - y`.
pub fn bce_with_logits(logit: f64, target: f64, pos_weight: f64) -> (f64, f64) {
    let x = logit;
    let y = target;
    let softplus = |v: f64| v.max(0.0) + (-v.abs()).exp().ln_1p();
    let sig = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    let loss = pos_weight * y * softplus(-x) + (1.0 - y) * softplus(x);
    let grad = -pos_weight * y * (1.0 - sig) + (1.0 - y) * sig;
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: f64, y: f64) -> f64 {
        let p = 1.0 / (1.0 + (-x).exp());
        -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
    }

    #[test]
    fn matches_naive_form_at_moderate_logits() {
        for &x in &[-5.0, -1.3, 0.0, 0.4, 2.0, 6.0] {
            for &y in &[0.0, 1.0] {
                let (loss, _) = bce_with_logits(x, y, 1.0);
                assert!((loss - naive(x, y)).abs() < 1e-12, "x={x} y={y}");
            }
        }
    }

    #[test]
    fn extreme_logits_stay_finite() {
        for &x in &[-1000.0, -50.0, 50.0, 1000.0] {
            for &y in &[0.0, 1.0] {
                let (loss, grad) = bce_with_logits(x, y, 1.0);
                assert!(loss.is_finite() && grad.is_finite(), "x={x} y={y}");
                assert!(loss >= 0.0);
            }
        }
        // a confident wrong answer costs about |x|
        let (loss, _) = bce_with_logits(1000.0, 0.0, 1.0);
        assert!((loss - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let h = 1e-6;
        for &x in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
            for &y in &[0.0, 1.0] {
                for &w in &[1.0, 2.5] {
                    let (_, grad) = bce_with_logits(x, y, w);
                    let (lp, _) = bce_with_logits(x + h, y, w);
                    let (lm, _) = bce_with_logits(x - h, y, w);
                    let fd = (lp - lm) / (2.0 * h);
                    assert!((fd - grad).abs() < 1e-8, "x={x} y={y} w={w}");
                }
            }
        }
    }

    #[test]
    fn gradient_is_sigmoid_minus_target_at_unit_weight() {
        for &x in &[-2.0, 0.0, 3.0] {
            for &y in &[0.0, 1.0] {
                let (_, grad) = bce_with_logits(x, y, 1.0);
                let sig = 1.0 / (1.0 + (-x).exp());
                assert!((grad - (sig - y)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn pos_weight_scales_only_the_positive_term() {
        let (l1, _) = bce_with_logits(0.3, 1.0, 1.0);
        let (l2, _) = bce_with_logits(0.3, 1.0, 2.0);
        assert!((l2 - 2.0 * l1).abs() < 1e-15);
        let (l1, _) = bce_with_logits(0.3, 0.0, 1.0);
        let (l2, _) = bce_with_logits(0.3, 0.0, 2.0);
        assert_eq!(l1.to_bits(), l2.to_bits());
    }

    #[test]
    fn label_symmetry_is_exact() {
        // flipping both the logit sign and the label gives the same loss bits
        for &x in &[0.1, 1.7, 9.0] {
            let (a, _) = bce_with_logits(x, 1.0, 1.0);
            let (b, _) = bce_with_logits(-x, 0.0, 1.0);
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
