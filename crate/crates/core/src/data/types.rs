use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Tissue class of a patch. Codes are stable and appear verbatim in the
/// on-disk tissue shards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TissueLabel {
    /// Cancer area.
    CA = 0,
    /// Cancer stroma.
    CS = 1,
    /// Background.
    BG = 2,
}

impl TissueLabel {
    pub const ALL: [TissueLabel; 3] = [TissueLabel::CA, TissueLabel::CS, TissueLabel::BG];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(TissueLabel::CA),
            1 => Ok(TissueLabel::CS),
            2 => Ok(TissueLabel::BG),
            other => Err(Error::InvalidInput(format!(
                "unknown tissue code {other} (valid: 0=CA, 1=CS, 2=BG)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TissueLabel::CA => "CA",
            TissueLabel::CS => "CS",
            TissueLabel::BG => "BG",
        }
    }
}

impl std::fmt::Display for TissueLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Fractional tissue coverage of one patch; a point on the 3-simplex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueFractions {
    pub ca: f64,
    pub cs: f64,
    pub bg: f64,
}

impl TissueFractions {
    pub fn new(ca: f64, cs: f64, bg: f64) -> Result<Self> {
        for (name, v) in [("ca", ca), ("cs", cs), ("bg", bg)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "tissue fraction {name}={v} outside [0,1]"
                )));
            }
        }
        let sum = ca + cs + bg;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "tissue fractions sum to {sum}, expected 1 within 1e-9"
            )));
        }
        Ok(Self { ca, cs, bg })
    }
}

/// Dominant-class rule: the class covering more than half the patch wins.
/// Without a majority class, fall back to the argmax with the fixed
/// priority CA > CS > BG on exact ties.
pub fn dominant_class(fractions: TissueFractions) -> TissueLabel {
    let ordered = [
        (TissueLabel::CA, fractions.ca),
        (TissueLabel::CS, fractions.cs),
        (TissueLabel::BG, fractions.bg),
    ];
    for (label, f) in ordered {
        if f > 0.5 {
            return label;
        }
    }
    let mut best = ordered[0];
    for cand in &ordered[1..] {
        if cand.1 > best.1 {
            best = *cand;
        }
    }
    best.0
}

/// One slide: a set of patch embeddings with per-patch tissue labels and a
/// single binary target for one mutation task.
#[derive(Debug, Clone)]
pub struct Bag {
    pub bag_id: String,
    /// `[num_patches, d_kv]`
    pub embeddings: Tensor,
    pub tissue: Vec<TissueLabel>,
    /// 0 or 1.
    pub label: u8,
    pub task: String,
}

impl Bag {
    pub fn new(
        bag_id: impl Into<String>,
        embeddings: Tensor,
        tissue: Vec<TissueLabel>,
        label: u8,
        task: impl Into<String>,
    ) -> Result<Self> {
        let bag_id = bag_id.into();
        if embeddings.shape().len() != 2 || embeddings.rows() == 0 {
            return Err(Error::InvalidInput(format!(
                "bag {bag_id}: embeddings must be [np, d_kv] with np >= 1, got {:?}",
                embeddings.shape()
            )));
        }
        if tissue.len() != embeddings.rows() {
            return Err(Error::InvalidInput(format!(
                "bag {bag_id}: {} tissue labels for {} patches",
                tissue.len(),
                embeddings.rows()
            )));
        }
        if !embeddings.is_finite() {
            return Err(Error::InvalidInput(format!(
                "bag {bag_id}: embeddings contain non-finite values"
            )));
        }
        if label > 1 {
            return Err(Error::InvalidInput(format!(
                "bag {bag_id}: label must be 0 or 1, got {label}"
            )));
        }
        Ok(Self {
            bag_id,
            embeddings,
            tissue,
            label,
            task: task.into(),
        })
    }

    pub fn num_patches(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn d_kv(&self) -> usize {
        self.embeddings.cols()
    }

    /// Sub-bag restricted to `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Bag> {
        let d = self.d_kv();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut tissue = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.num_patches() {
                return Err(Error::InvalidInput(format!(
                    "bag {}: patch index {i} out of range ({} patches)",
                    self.bag_id,
                    self.num_patches()
                )));
            }
            data.extend_from_slice(self.embeddings.row(i));
            tissue.push(self.tissue[i]);
        }
        Ok(Bag {
            bag_id: self.bag_id.clone(),
            embeddings: Tensor::from_vec(&[indices.len(), d], data)?,
            tissue,
            label: self.label,
            task: self.task.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn dominant_class_majority_cases() {
        let f = TissueFractions::new(0.6, 0.3, 0.1).unwrap();
        assert_eq!(dominant_class(f), TissueLabel::CA);
        let f = TissueFractions::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(dominant_class(f), TissueLabel::CA);
        let f = TissueFractions::new(0.2, 0.25, 0.55).unwrap();
        assert_eq!(dominant_class(f), TissueLabel::BG);
    }

    #[test]
    fn dominant_class_tie_break_priority() {
        // no class above one half: argmax with CA > CS > BG on ties
        let f = TissueFractions::new(0.4, 0.4, 0.2).unwrap();
        assert_eq!(dominant_class(f), TissueLabel::CA);
        let f = TissueFractions::new(0.2, 0.4, 0.4).unwrap();
        assert_eq!(dominant_class(f), TissueLabel::CS);
        let f = TissueFractions::new(0.3, 0.35, 0.35).unwrap();
        assert_eq!(dominant_class(f), TissueLabel::CS);
    }

    #[test]
    fn fractions_reject_off_simplex() {
        assert!(TissueFractions::new(0.5, 0.5, 0.5).is_err());
        assert!(TissueFractions::new(-0.1, 0.6, 0.5).is_err());
        assert!(TissueFractions::new(0.5, 0.3, 0.2 + 1e-7).is_err());
    }

    proptest! {
        // total on the simplex, and the winner never has a smaller
        // fraction than any other class
        #[test]
        fn dominant_class_is_total_and_argmax(seed in 0u64..2000) {
            let mut rng = derive_rng(seed, "dominant-total");
            let a: f64 = rng.gen_range(0.0..10.0);
            let b: f64 = rng.gen_range(0.0..10.0);
            let c: f64 = rng.gen_range(0.0..10.0);
            let s = a + b + c;
            prop_assume!(s > 0.0);
            // renormalize so the sum is exactly 1 up to rounding
            let f = TissueFractions::new(a / s, b / s, 1.0 - a / s - b / s);
            prop_assume!(f.is_ok());
            let f = f.unwrap();
            let win = dominant_class(f);
            let frac_of = |l: TissueLabel| match l {
                TissueLabel::CA => f.ca,
                TissueLabel::CS => f.cs,
                TissueLabel::BG => f.bg,
            };
            for l in TissueLabel::ALL {
                prop_assert!(frac_of(win) >= frac_of(l));
            }
        }
    }

    #[test]
    fn tissue_codes_round_trip() {
        for l in TissueLabel::ALL {
            assert_eq!(TissueLabel::from_code(l.code()).unwrap(), l);
        }
        assert!(TissueLabel::from_code(3).is_err());
    }

    #[test]
    fn bag_validation() {
        let emb = Tensor::zeros(&[2, 4]);
        assert!(Bag::new("b", emb.clone(), vec![TissueLabel::CA], 0, "t").is_err());
        assert!(Bag::new(
            "b",
            emb.clone(),
            vec![TissueLabel::CA, TissueLabel::BG],
            2,
            "t"
        )
        .is_err());
        let bag = Bag::new("b", emb, vec![TissueLabel::CA, TissueLabel::BG], 1, "t").unwrap();
        assert_eq!(bag.num_patches(), 2);
        assert_eq!(bag.d_kv(), 4);
    }

    #[test]
    fn bag_subset_picks_rows_in_order() {
        let emb = Tensor::from_vec(&[3, 2], vec![0.0, 0.1, 1.0, 1.1, 2.0, 2.1]).unwrap();
        let bag = Bag::new(
            "b",
            emb,
            vec![TissueLabel::CA, TissueLabel::CS, TissueLabel::BG],
            1,
            "t",
        )
        .unwrap();
        let sub = bag.subset(&[2, 0]).unwrap();
        assert_eq!(sub.embeddings.data(), &[2.0, 2.1, 0.0, 0.1]);
        assert_eq!(sub.tissue, vec![TissueLabel::BG, TissueLabel::CA]);
        assert!(bag.subset(&[3]).is_err());
    }
}
