//! Synthetic bag generator.
//!
//! Negative bags draw every patch from a per-tissue Gaussian: mean vector
//! per tissue class (entries N(0, 0.25^2)), unit isotropic noise. Positive
//! bags additionally shift a fraction of their CA patches by
//! `signal_strength` along a planted unit direction, and all of their CS
//! patches by half that along a second, orthogonal direction — a stand-in
//! for tumors altering adjacent stroma. Both directions live in the first
//! `signal_dim` coordinates. Everything is a pure function of the seed.

use std::path::Path;

use rand::seq::index::sample as index_sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::manifest::{Manifest, ManifestRecord};
use crate::data::shard::{write_embedding_shard, write_tissue_shard};
use crate::data::types::TissueLabel;
use crate::error::{Error, Result};
use crate::rng::derive_rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_bags: usize,
    pub d_kv: usize,
    /// Shift applied to signal-carrying patches of positive bags, in units
    /// of the per-coordinate noise sigma. 0 produces a label-free null
    /// dataset.
    pub signal_strength: f64,
    #[serde(default = "default_patches_min")]
    pub patches_min: usize,
    #[serde(default = "default_patches_max")]
    pub patches_max: usize,
    #[serde(default = "default_positive_rate")]
    pub positive_rate: f64,
    /// Dimension of the subspace holding the planted directions.
    #[serde(default = "default_signal_dim")]
    pub signal_dim: usize,
    /// Fraction of a positive bag's CA patches that receive the shift.
    #[serde(default = "default_ca_shift_fraction")]
    pub ca_shift_fraction: f64,
    /// Tissue class probabilities (CA, CS, BG) per patch.
    #[serde(default = "default_tissue_mixture")]
    pub tissue_mixture: [f64; 3],
    #[serde(default = "default_task")]
    pub task: String,
}

fn default_patches_min() -> usize {
    32
}
fn default_patches_max() -> usize {
    96
}
fn default_positive_rate() -> f64 {
    0.5
}
fn default_signal_dim() -> usize {
    8
}
fn default_ca_shift_fraction() -> f64 {
    0.2
}
fn default_tissue_mixture() -> [f64; 3] {
    [0.5, 0.3, 0.2]
}
fn default_task() -> String {
    "mut".to_string()
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: String| {
            Err(Error::InvalidParameter { name, reason })
        };
        if self.n_bags < 2 {
            return bad("n_bags", format!("need at least 2 bags, got {}", self.n_bags));
        }
        if self.d_kv == 0 {
            return bad("d_kv", "need d_kv >= 1".into());
        }
        if self.patches_min == 0 || self.patches_max < self.patches_min {
            return bad(
                "patches",
                format!("bad range [{}, {}]", self.patches_min, self.patches_max),
            );
        }
        if !(0.0..=1.0).contains(&self.positive_rate) {
            return bad("positive_rate", format!("{} outside [0,1]", self.positive_rate));
        }
        if !(self.signal_strength.is_finite() && self.signal_strength >= 0.0) {
            return bad("signal_strength", format!("{} invalid", self.signal_strength));
        }
        if self.signal_dim == 0 || self.signal_dim > self.d_kv {
            return bad(
                "signal_dim",
                format!("{} outside [1, d_kv={}]", self.signal_dim, self.d_kv),
            );
        }
        if self.signal_strength > 0.0 && self.signal_dim < 2 {
            return bad(
                "signal_dim",
                "need >= 2 to plant two orthogonal directions".into(),
            );
        }
        if !(0.0..=1.0).contains(&self.ca_shift_fraction) {
            return bad(
                "ca_shift_fraction",
                format!("{} outside [0,1]", self.ca_shift_fraction),
            );
        }
        let msum: f64 = self.tissue_mixture.iter().sum();
        if self.tissue_mixture.iter().any(|&m| m < 0.0) || (msum - 1.0).abs() > 1e-9 {
            return bad(
                "tissue_mixture",
                format!("{:?} is not a probability mixture", self.tissue_mixture),
            );
        }
        if self.task.is_empty() || self.task.contains(['\t', ',', '=', '\n']) {
            return bad("task", format!("task name '{}' unusable in manifests", self.task));
        }
        Ok(())
    }
}

/// Two orthonormal directions confined to the first `signal_dim` coords.
fn planted_directions(d_kv: usize, signal_dim: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let normal = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| {
                // Box-Muller
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect()
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();

    let g1 = normal(rng, signal_dim);
    let n1 = norm(&g1);
    let u1: Vec<f64> = g1.iter().map(|v| v / n1).collect();
    let u2 = loop {
        let g2 = normal(rng, signal_dim);
        let dot: f64 = g2.iter().zip(&u1).map(|(a, b)| a * b).sum();
        let w: Vec<f64> = g2.iter().zip(&u1).map(|(g, u)| g - dot * u).collect();
        let nw = norm(&w);
        if nw > 1e-9 {
            break w.iter().map(|v| v / nw).collect::<Vec<f64>>();
        }
    };
    let pad = |v: Vec<f64>| {
        let mut full = vec![0.0; d_kv];
        full[..signal_dim].copy_from_slice(&v);
        full
    };
    (pad(u1), pad(u2))
}

/// Generate a dataset under `out_dir` (manifest.txt plus a shards/
/// directory) and return the loaded-form manifest.
pub fn synth_generate(spec: &SynthSpec, seed: u64, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    let shard_dir = out_dir.join("shards");
    std::fs::create_dir_all(&shard_dir).map_err(|e| Error::io(&shard_dir, e))?;

    let mut means = vec![vec![0.0f64; spec.d_kv]; 3];
    {
        let mut rng = derive_rng(seed, "synth/means");
        for row in means.iter_mut() {
            for v in row.iter_mut() {
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen();
                *v = 0.25 * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            }
        }
    }
    let (u1, u2) = {
        let mut rng = derive_rng(seed, "synth/dirs");
        planted_directions(spec.d_kv, spec.signal_dim, &mut rng)
    };

    let n_pos = (spec.n_bags as f64 * spec.positive_rate).round() as usize;
    let mut labels: Vec<u8> = vec![1; n_pos];
    labels.resize(spec.n_bags, 0);
    labels.shuffle(&mut derive_rng(seed, "synth/labels"));

    let mut records = Vec::with_capacity(spec.n_bags);
    for (i, &label) in labels.iter().enumerate() {
        let bag_id = format!("bag{i:05}");
        let mut rng = derive_rng(seed, &format!("synth/{bag_id}"));
        let np = rng.gen_range(spec.patches_min..=spec.patches_max);

        let tissue: Vec<TissueLabel> = (0..np)
            .map(|_| {
                let u: f64 = rng.gen();
                if u < spec.tissue_mixture[0] {
                    TissueLabel::CA
                } else if u < spec.tissue_mixture[0] + spec.tissue_mixture[1] {
                    TissueLabel::CS
                } else {
                    TissueLabel::BG
                }
            })
            .collect();

        let mut data = vec![0.0f64; np * spec.d_kv];
        for (p, row) in data.chunks_exact_mut(spec.d_kv).enumerate() {
            let mean = &means[tissue[p].code() as usize];
            for (v, &m) in row.iter_mut().zip(mean) {
                let a: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let b: f64 = rng.gen();
                *v = m + (-2.0 * a.ln()).sqrt() * (2.0 * std::f64::consts::PI * b).cos();
            }
        }

        if label == 1 && spec.signal_strength > 0.0 {
            let ca_rows: Vec<usize> = (0..np).filter(|&p| tissue[p] == TissueLabel::CA).collect();
            let k = (spec.ca_shift_fraction * ca_rows.len() as f64).ceil() as usize;
            if k > 0 {
                for local in index_sample(&mut rng, ca_rows.len(), k) {
                    let p = ca_rows[local];
                    for (v, d) in data[p * spec.d_kv..(p + 1) * spec.d_kv].iter_mut().zip(&u1) {
                        *v += spec.signal_strength * d;
                    }
                }
            }
            for p in (0..np).filter(|&p| tissue[p] == TissueLabel::CS) {
                for (v, d) in data[p * spec.d_kv..(p + 1) * spec.d_kv].iter_mut().zip(&u2) {
                    *v += 0.5 * spec.signal_strength * d;
                }
            }
        }

        let emb_rel = format!("shards/{bag_id}.emb");
        let tis_rel = format!("shards/{bag_id}.tis");
        write_embedding_shard(&out_dir.join(&emb_rel), np, spec.d_kv, &data)?;
        write_tissue_shard(&out_dir.join(&tis_rel), &tissue)?;
        records.push(ManifestRecord {
            bag_id,
            emb_path: emb_rel.into(),
            tissue_path: tis_rel.into(),
            labels: [(spec.task.clone(), label)].into_iter().collect(),
        });
    }

    let manifest = Manifest::new(spec.d_kv, out_dir.to_path_buf(), records)?;
    manifest.write(&out_dir.join("manifest.txt"))?;
    Ok(manifest)
}
