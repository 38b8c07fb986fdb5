//! Cosine learning-rate schedule.

/// Cosine decay from `eta_max` at `t = 0` to `eta_min` at `t = t_max`,
/// clamped to `eta_min` for any later step. The endpoints are returned
/// as-is rather than recomputed, so they are exact in f64.
pub fn cosine_lr(t: usize, t_max: usize, eta_max: f64, eta_min: f64) -> f64 {
    debug_assert!(t_max >= 1);
    debug_assert!(eta_max >= eta_min && eta_min >= 0.0);
    if t == 0 {
        return eta_max;
    }
    if t >= t_max {
        return eta_min;
    }
    let frac = t as f64 / t_max as f64;
    eta_min + 0.5 * (eta_max - eta_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_are_bitwise_exact() {
        let (hi, lo) = (2e-4, 1e-6);
        assert_eq!(cosine_lr(0, 10, hi, lo).to_bits(), hi.to_bits());
        assert_eq!(cosine_lr(10, 10, hi, lo).to_bits(), lo.to_bits());
        assert_eq!(cosine_lr(11, 10, hi, lo).to_bits(), lo.to_bits());
        assert_eq!(cosine_lr(1000, 10, hi, lo).to_bits(), lo.to_bits());
    }

    #[test]
    fn midpoint_hits_the_arithmetic_mean() {
        // cos(pi/2) is ~6e-17 in f64, so the midpoint sits at the mean of
        // the endpoints to well below any tolerance that matters
        let got = cosine_lr(5, 10, 2e-4, 1e-6);
        assert!((got - 1.005e-4).abs() < 1e-18, "got {got}");
    }

    #[test]
    fn schedule_is_monotone_decreasing() {
        let mut prev = f64::INFINITY;
        for t in 0..=20 {
            let lr = cosine_lr(t, 20, 1e-3, 1e-7);
            assert!(lr <= prev, "t={t}: {lr} > {prev}");
            assert!(lr >= 1e-7 && lr <= 1e-3);
            prev = lr;
        }
    }

    #[test]
    fn degenerate_single_step_schedule() {
        assert_eq!(cosine_lr(0, 1, 1e-3, 0.0), 1e-3);
        assert_eq!(cosine_lr(1, 1, 1e-3, 0.0), 0.0);
    }
}
