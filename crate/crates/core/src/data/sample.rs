//! Stratified patch sampling at fixed per-tissue ratios.
//!
//! Quota rule, in full (the redistribution behavior is part of the format
//! contract and is asserted by tests):
//!
//! 1. If `n_target >= np`, return every index (shuffled).
//! 2. Ideal quotas `n_target * ratio_c` are rounded by largest remainder
//!    (ties broken CA > CS > BG).
//! 3. Each quota is capped at its class size. The shortfall is then
//!    redistributed across classes proportionally to their *remaining
//!    capacity* (class size minus patches already taken), again rounded
//!    by largest remainder with the same tie-break.
//!
//! Example: sizes (100 CA, 10 CS, 100 BG), n_target 100, ratios
//! (0.5, 0.3, 0.2): quotas (50, 30, 20) cap to (50, 10, 20); the
//! shortfall of 20 splits over remaining capacity (50, 0, 80) as
//! (8, 0, 12), giving final counts (58, 10, 32).

use rand::seq::index::sample as index_sample;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::types::Bag;
use crate::error::{Error, Result};

pub const DEFAULT_TISSUE_RATIOS: [f64; 3] = [0.5, 0.3, 0.2];

/// Largest-remainder apportionment of `total` over three weights,
/// ties broken by class order.
fn largest_remainder(total: usize, weights: [f64; 3]) -> [usize; 3] {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 || total == 0 {
        return [0, 0, 0];
    }
    let real: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out = [0usize; 3];
    let mut fracs: Vec<(usize, f64)> = Vec::with_capacity(3);
    let mut assigned = 0;
    for c in 0..3 {
        let fl = real[c].floor();
        out[c] = fl as usize;
        assigned += out[c];
        fracs.push((c, real[c] - fl));
    }
    // stable sort keeps class order on equal fractions
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    for &(c, _) in fracs.iter().take(total - assigned) {
        out[c] += 1;
    }
    out
}

/// Per-class take counts under the documented quota-plus-redistribution
/// rule. `sizes` are patch counts per class in CA, CS, BG order.
/// Requires `n_target <= sizes.sum()`.
pub(crate) fn stratified_quota(n_target: usize, ratios: [f64; 3], sizes: [usize; 3]) -> [usize; 3] {
    debug_assert!(n_target <= sizes.iter().sum::<usize>());
    let ideal = largest_remainder(n_target, ratios);
    let mut take = [0usize; 3];
    for c in 0..3 {
        take[c] = ideal[c].min(sizes[c]);
    }
    let mut shortfall = n_target - take.iter().sum::<usize>();
    // proportional shares never exceed remaining capacity, so one pass
    // fills the shortfall; the loop guards the all-zero-capacity edge
    while shortfall > 0 {
        let capacity = [
            (sizes[0] - take[0]) as f64,
            (sizes[1] - take[1]) as f64,
            (sizes[2] - take[2]) as f64,
        ];
        let extra = largest_remainder(shortfall, capacity);
        for c in 0..3 {
            take[c] += extra[c].min(sizes[c] - take[c]);
        }
        let filled = n_target - take.iter().sum::<usize>();
        debug_assert!(filled < shortfall, "quota redistribution stalled");
        shortfall = filled;
    }
    take
}

/// Sample patch indices at the given tissue ratios, without replacement,
/// output order randomized.
pub fn stratified_sample(
    bag: &Bag,
    n_target: usize,
    ratios: [f64; 3],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if n_target == 0 {
        return Err(Error::InvalidParameter {
            name: "n_target",
            reason: "need at least one sampled patch".into(),
        });
    }
    for r in ratios {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidParameter {
                name: "ratios",
                reason: format!("ratio {r} outside [0,1]"),
            });
        }
    }
    let rsum: f64 = ratios.iter().sum();
    if (rsum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter {
            name: "ratios",
            reason: format!("ratios sum to {rsum}, expected 1"),
        });
    }
    let np = bag.num_patches();
    if np == 0 {
        return Err(Error::InvalidInput(format!("bag {}: empty bag", bag.bag_id)));
    }

    if n_target >= np {
        let mut all: Vec<usize> = (0..np).collect();
        all.shuffle(rng);
        return Ok(all);
    }

    let mut by_class: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (i, &t) in bag.tissue.iter().enumerate() {
        by_class[t.code() as usize].push(i);
    }
    let sizes = [by_class[0].len(), by_class[1].len(), by_class[2].len()];
    let take = stratified_quota(n_target, ratios, sizes);

    let mut picked = Vec::with_capacity(n_target);
    for c in 0..3 {
        if take[c] == 0 {
            continue;
        }
        for local in index_sample(rng, sizes[c], take[c]) {
            picked.push(by_class[c][local]);
        }
    }
    picked.shuffle(rng);
    Ok(picked)
}
