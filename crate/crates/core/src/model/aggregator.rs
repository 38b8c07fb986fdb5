//! Bag-level models: shared input encoding, one of four aggregator bodies,
//! dropout, and a single-logit classifier head.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use crate::data::TissueLabel;
use crate::error::{Error, Result};
use crate::model::blocks::{
    AsymBlockCache, AsymDecoderBlock, DecoderBlock, DecoderBlockCache, EncoderBlock,
    EncoderBlockCache,
};
use crate::model::config::{AggregatorKind, ModelConfig};
use crate::model::layers::{GatedAttentionPool, GatedPoolCache, Linear};
use crate::numerics::ops::{
    dropout, dropout_backward, mean_rows, mean_rows_backward, DropoutMask, DropoutMode,
};
use crate::numerics::{ParamSet, Parameter, Tensor};

/// Add the learned per-class tissue row onto each patch embedding.
/// `table` is `[3, d_kv]`, indexed by the tissue code.
pub fn apply_tissue_encoding(
    embeddings: &Tensor,
    labels: &[TissueLabel],
    table: &Tensor,
) -> Result<Tensor> {
    if table.shape() != [3, embeddings.cols()] {
        return Err(Error::ShapeMismatch {
            op: "apply_tissue_encoding",
            left: embeddings.shape().to_vec(),
            right: table.shape().to_vec(),
        });
    }
    if labels.len() != embeddings.rows() {
        return Err(Error::InvalidInput(format!(
            "got {} tissue labels for {} patches",
            labels.len(),
            embeddings.rows()
        )));
    }
    let mut out = embeddings.clone();
    let d = embeddings.cols();
    for (row, &lab) in out.data_mut().chunks_exact_mut(d).zip(labels) {
        let enc = table.row(lab.code() as usize);
        for (r, &e) in row.iter_mut().zip(enc) {
            *r += e;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Body {
    Asym {
        queries: Parameter,
        blocks: Vec<AsymDecoderBlock>,
    },
    Dec {
        queries: Parameter,
        blocks: Vec<DecoderBlock>,
    },
    Enc {
        blocks: Vec<EncoderBlock>,
    },
    Abmil {
        pool: GatedAttentionPool,
    },
}

#[derive(Debug, Clone)]
enum BodyCache {
    Asym { caches: Vec<AsymBlockCache>, nq: usize },
    Dec { caches: Vec<DecoderBlockCache>, nq: usize },
    Enc { caches: Vec<EncoderBlockCache>, np: usize },
    Abmil { cache: GatedPoolCache },
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct Forward {
    pub logit: f64,
    x: Tensor,
    labels: Vec<TissueLabel>,
    body: BodyCache,
    dropped: Tensor,
    mask: DropoutMask,
}

/// One attention weight matrix captured during a forward pass.
#[derive(Debug, Clone)]
pub struct AttentionMap {
    pub block: usize,
    pub site: &'static str,
    pub head: usize,
    pub weights: Tensor,
}

#[derive(Debug, Clone)]
pub struct MilModel {
    pub config: ModelConfig,
    tissue: Option<Parameter>,
    body: Body,
    classifier: Linear,
}

impl MilModel {
    /// Parameters are drawn from `rng` in a fixed order (tissue table,
    /// queries, blocks, classifier), so one seed pins the whole model.
    pub fn new(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let a = &config.attention;
        let tissue = config
            .use_tissue_encoding
            .then(|| Parameter::new(Tensor::randn(&[3, a.d_kv], 0.02, rng)));
        let body = match config.aggregator {
            AggregatorKind::AsymTransDec => Body::Asym {
                queries: Parameter::new(Tensor::randn(&[a.n_queries, a.d_q], 0.02, rng)),
                blocks: (0..a.n_layers)
                    .map(|_| {
                        AsymDecoderBlock::new(
                            a.d_q,
                            a.d_kv,
                            a.n_heads,
                            config.use_ffn,
                            config.norm_placement,
                            rng,
                        )
                    })
                    .collect(),
            },
            AggregatorKind::TransDec => Body::Dec {
                queries: Parameter::new(Tensor::randn(&[a.n_queries, a.d_kv], 0.02, rng)),
                blocks: (0..a.n_layers)
                    .map(|_| {
                        DecoderBlock::new(
                            a.d_kv,
                            a.n_heads,
                            config.use_ffn,
                            config.norm_placement,
                            rng,
                        )
                    })
                    .collect(),
            },
            AggregatorKind::TransEnc => Body::Enc {
                blocks: (0..a.n_layers)
                    .map(|_| {
                        EncoderBlock::new(
                            a.d_kv,
                            a.n_heads,
                            config.use_ffn,
                            config.norm_placement,
                            rng,
                        )
                    })
                    .collect(),
            },
            AggregatorKind::Abmil => Body::Abmil {
                pool: GatedAttentionPool::new(a.d_kv, a.d_q, rng),
            },
        };
        let head_in = match config.aggregator {
            AggregatorKind::AsymTransDec => a.d_q,
            _ => a.d_kv,
        };
        let classifier = Linear::new(head_in, 1, true, rng);
        Ok(Self {
            config,
            tissue,
            body,
            classifier,
        })
    }

    /// `embeddings` is `[np, d_kv]`; `labels` must have one entry per patch.
    /// Train mode with a nonzero dropout rate needs `rng`; eval never does.
    pub fn forward(
        &self,
        embeddings: &Tensor,
        labels: &[TissueLabel],
        mode: DropoutMode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        let a = &self.config.attention;
        if embeddings.shape().len() != 2 || embeddings.cols() != a.d_kv {
            return Err(Error::ShapeMismatch {
                op: "model forward",
                left: vec![embeddings.rows(), a.d_kv],
                right: embeddings.shape().to_vec(),
            });
        }
        if labels.len() != embeddings.rows() {
            return Err(Error::InvalidInput(format!(
                "got {} tissue labels for {} patches",
                labels.len(),
                embeddings.rows()
            )));
        }
        let x = match &self.tissue {
            Some(t) => apply_tissue_encoding(embeddings, labels, &t.value)?,
            None => embeddings.clone(),
        };
        let (pooled, body) = match &self.body {
            Body::Asym { queries, blocks } => {
                let mut q = queries.value.clone();
                let mut caches = Vec::with_capacity(blocks.len());
                for b in blocks {
                    let (next, c) = b.forward(&q, &x)?;
                    q = next;
                    caches.push(c);
                }
                let nq = q.rows();
                (as_row(mean_rows(&q)), BodyCache::Asym { caches, nq })
            }
            Body::Dec { queries, blocks } => {
                let mut q = queries.value.clone();
                let mut caches = Vec::with_capacity(blocks.len());
                for b in blocks {
                    let (next, c) = b.forward(&q, &x)?;
                    q = next;
                    caches.push(c);
                }
                let nq = q.rows();
                (as_row(mean_rows(&q)), BodyCache::Dec { caches, nq })
            }
            Body::Enc { blocks } => {
                let mut t = x.clone();
                let mut caches = Vec::with_capacity(blocks.len());
                for b in blocks {
                    let (next, c) = b.forward(&t)?;
                    t = next;
                    caches.push(c);
                }
                let np = t.rows();
                (as_row(mean_rows(&t)), BodyCache::Enc { caches, np })
            }
            Body::Abmil { pool } => {
                let (z, cache) = pool.forward(&x)?;
                (z, BodyCache::Abmil { cache })
            }
        };
        // single dropout site, right before the classifier; the gated-pool
        // aggregator goes without (its head reads the pooled embedding raw)
        let wants_dropout = mode == DropoutMode::Train
            && a.dropout_p > 0.0
            && !matches!(self.body, Body::Abmil { .. });
        let (dropped, mask) = if wants_dropout {
            match rng {
                Some(r) => dropout(&pooled, a.dropout_p, DropoutMode::Train, r)?,
                None => {
                    return Err(Error::InvalidParameter {
                        name: "rng",
                        reason: "train-mode dropout requires an rng".into(),
                    })
                }
            }
        } else {
            (pooled, DropoutMask::identity())
        };
        let logit = self.classifier.forward(&dropped)?.data()[0];
        Ok(Forward {
            logit,
            x,
            labels: labels.to_vec(),
            body,
            dropped,
            mask,
        })
    }

    /// Accumulate parameter gradients for `d loss / d logit = dlogit`.
    pub fn backward(&mut self, fwd: &Forward, dlogit: f64) -> Result<()> {
        let dy = Tensor::from_vec(&[1, 1], vec![dlogit])?;
        let ddropped = self.classifier.backward(&fwd.dropped, &dy)?;
        let dpooled = dropout_backward(&fwd.mask, &ddropped);
        let dpatches = match (&mut self.body, &fwd.body) {
            (Body::Asym { queries, blocks }, BodyCache::Asym { caches, nq }) => {
                let mut dq = mean_rows_backward(*nq, &dpooled);
                let mut dpatches = Tensor::zeros(&[fwd.x.rows(), fwd.x.cols()]);
                for (b, c) in blocks.iter_mut().zip(caches.iter()).rev() {
                    let (prev, dp) = b.backward(c, &dq)?;
                    dq = prev;
                    for (a, &v) in dpatches.data_mut().iter_mut().zip(dp.data()) {
                        *a += v;
                    }
                }
                queries.accumulate(dq.data(), 1.0);
                dpatches
            }
            (Body::Dec { queries, blocks }, BodyCache::Dec { caches, nq }) => {
                let mut dq = mean_rows_backward(*nq, &dpooled);
                let mut dpatches = Tensor::zeros(&[fwd.x.rows(), fwd.x.cols()]);
                for (b, c) in blocks.iter_mut().zip(caches.iter()).rev() {
                    let (prev, dp) = b.backward(c, &dq)?;
                    dq = prev;
                    for (a, &v) in dpatches.data_mut().iter_mut().zip(dp.data()) {
                        *a += v;
                    }
                }
                queries.accumulate(dq.data(), 1.0);
                dpatches
            }
            (Body::Enc { blocks }, BodyCache::Enc { caches, np }) => {
                let mut dt = mean_rows_backward(*np, &dpooled);
                for (b, c) in blocks.iter_mut().zip(caches.iter()).rev() {
                    dt = b.backward(c, &dt)?;
                }
                dt
            }
            (Body::Abmil { pool }, BodyCache::Abmil { cache }) => pool.backward(cache, &dpooled)?,
            _ => {
                return Err(Error::InvalidInput(
                    "forward cache does not match the model body".into(),
                ))
            }
        };
        if let Some(t) = &mut self.tissue {
            let d = fwd.x.cols();
            let mut g = vec![0.0; 3 * d];
            for (i, &lab) in fwd.labels.iter().enumerate() {
                let off = lab.code() as usize * d;
                for (gv, &dv) in g[off..off + d].iter_mut().zip(dpatches.row(i)) {
                    *gv += dv;
                }
            }
            t.accumulate(&g, 1.0);
        }
        Ok(())
    }

    /// Attention weights recorded during `fwd`, in block order.
    pub fn attention_maps(&self, fwd: &Forward) -> Vec<AttentionMap> {
        let mut maps = Vec::new();
        let mut push_heads = |block: usize, site: &'static str, attn: &[Tensor]| {
            for (head, w) in attn.iter().enumerate() {
                maps.push(AttentionMap {
                    block,
                    site,
                    head,
                    weights: w.clone(),
                });
            }
        };
        match &fwd.body {
            BodyCache::Asym { caches, .. } => {
                for (i, c) in caches.iter().enumerate() {
                    push_heads(i, "self", &c.self_cache.attn);
                    push_heads(i, "cross", &c.cross_cache.attn);
                }
            }
            BodyCache::Dec { caches, .. } => {
                for (i, c) in caches.iter().enumerate() {
                    push_heads(i, "self", &c.self_cache.attn);
                    push_heads(i, "cross", &c.cross_cache.attn);
                }
            }
            BodyCache::Enc { caches, .. } => {
                for (i, c) in caches.iter().enumerate() {
                    push_heads(i, "self", &c.self_cache.attn);
                }
            }
            BodyCache::Abmil { cache } => {
                push_heads(0, "pool", std::slice::from_ref(&cache.attn));
            }
        }
        maps
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(String, &Parameter)) {
        if let Some(t) = &self.tissue {
            f("tissue".into(), t);
        }
        match &self.body {
            Body::Asym { queries, blocks } => {
                f("queries".into(), queries);
                for (i, b) in blocks.iter().enumerate() {
                    b.visit(&format!("blocks.{i}"), f);
                }
            }
            Body::Dec { queries, blocks } => {
                f("queries".into(), queries);
                for (i, b) in blocks.iter().enumerate() {
                    b.visit(&format!("blocks.{i}"), f);
                }
            }
            Body::Enc { blocks } => {
                for (i, b) in blocks.iter().enumerate() {
                    b.visit(&format!("blocks.{i}"), f);
                }
            }
            Body::Abmil { pool } => pool.visit("pool", f),
        }
        self.classifier.visit("classifier", f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut Parameter)) {
        if let Some(t) = &mut self.tissue {
            f("tissue".into(), t);
        }
        match &mut self.body {
            Body::Asym { queries, blocks } => {
                f("queries".into(), queries);
                for (i, b) in blocks.iter_mut().enumerate() {
                    b.visit_mut(&format!("blocks.{i}"), f);
                }
            }
            Body::Dec { queries, blocks } => {
                f("queries".into(), queries);
                for (i, b) in blocks.iter_mut().enumerate() {
                    b.visit_mut(&format!("blocks.{i}"), f);
                }
            }
            Body::Enc { blocks } => {
                for (i, b) in blocks.iter_mut().enumerate() {
                    b.visit_mut(&format!("blocks.{i}"), f);
                }
            }
            Body::Abmil { pool } => pool.visit_mut("pool", f),
        }
        self.classifier.visit_mut("classifier", f);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.numel());
        n
    }

    pub fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }

    /// Gradients from the last backward pass, keyed by parameter name.
    pub fn grads(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        self.visit_params(&mut |name, p| {
            if let Some(g) = p.grad() {
                out.insert(name, Tensor::from_raw(p.shape().to_vec(), g.to_vec()));
            }
        });
        out
    }
}

fn as_row(t: Tensor) -> Tensor {
    let n = t.numel();
    Tensor::from_raw(vec![1, n], t.data().to_vec())
}

impl ParamSet for MilModel {
    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |n, _| names.push(n));
        names
    }

    fn param_numel(&self, name: &str) -> usize {
        let mut out = None;
        self.visit_params(&mut |n, p| {
            if n == name {
                out = Some(p.numel());
            }
        });
        out.unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    fn param_get(&self, name: &str, idx: usize) -> f64 {
        let mut out = None;
        self.visit_params(&mut |n, p| {
            if n == name {
                out = Some(p.value.data()[idx]);
            }
        });
        out.unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    fn param_set(&mut self, name: &str, idx: usize, value: f64) {
        let mut hit = false;
        self.visit_params_mut(&mut |n, p| {
            if n == name {
                p.value.data_mut()[idx] = value;
                hit = true;
            }
        });
        assert!(hit, "unknown parameter {name}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::expected_param_count;
    use crate::model::config::NormPlacement;
    use crate::numerics::{gradcheck, GradCheckOptions};
    use crate::rng::derive_rng;
    use rand::seq::SliceRandom;

    fn tiny_config(kind: AggregatorKind) -> ModelConfig {
        let mut c = ModelConfig::new(kind, 6);
        c.attention.d_q = 4;
        c.attention.n_heads = 2;
        c.attention.n_queries = 3;
        c.attention.n_layers = 1;
        c
    }

    fn fixture(np: usize, d_kv: usize, seed: u64) -> (Tensor, Vec<TissueLabel>) {
        let mut rng = derive_rng(seed, "model-fixture");
        let emb = Tensor::randn(&[np, d_kv], 1.0, &mut rng);
        let labels: Vec<TissueLabel> = (0..np)
            .map(|i| TissueLabel::ALL[i % 3])
            .collect();
        (emb, labels)
    }

    #[test]
    fn logits_are_permutation_invariant() {
        let (emb, labels) = fixture(7, 6, 30);
        for kind in AggregatorKind::ALL {
            let mut rng = derive_rng(31, "perm-init");
            let model = MilModel::new(tiny_config(kind), &mut rng).unwrap();
            let base = model
                .forward(&emb, &labels, DropoutMode::Eval, None)
                .unwrap()
                .logit;
            let mut shuffle_rng = derive_rng(32, "perm-shuffle");
            for _ in 0..5 {
                let mut order: Vec<usize> = (0..7).collect();
                order.shuffle(&mut shuffle_rng);
                let mut data = Vec::new();
                let mut plabels = Vec::new();
                for &i in &order {
                    data.extend_from_slice(emb.row(i));
                    plabels.push(labels[i]);
                }
                let perm = Tensor::from_vec(&[7, 6], data).unwrap();
                let logit = model
                    .forward(&perm, &plabels, DropoutMode::Eval, None)
                    .unwrap()
                    .logit;
                assert!(
                    (logit - base).abs() < 1e-9,
                    "{kind:?}: {logit} vs {base}"
                );
            }
        }
    }

    #[test]
    fn logits_are_invariant_to_duplicating_every_patch() {
        let (emb, labels) = fixture(5, 6, 33);
        let mut doubled = Vec::new();
        let mut dlabels = Vec::new();
        for i in 0..5 {
            for _ in 0..2 {
                doubled.extend_from_slice(emb.row(i));
                dlabels.push(labels[i]);
            }
        }
        let doubled = Tensor::from_vec(&[10, 6], doubled).unwrap();
        for kind in AggregatorKind::ALL {
            let mut rng = derive_rng(34, "dup-init");
            let model = MilModel::new(tiny_config(kind), &mut rng).unwrap();
            let a = model
                .forward(&emb, &labels, DropoutMode::Eval, None)
                .unwrap()
                .logit;
            let b = model
                .forward(&doubled, &dlabels, DropoutMode::Eval, None)
                .unwrap()
                .logit;
            if kind == AggregatorKind::TransEnc {
                // token-mean pooling sees the same multiset twice; identical
                assert!((a - b).abs() < 1e-9, "{kind:?}");
            } else {
                assert!((a - b).abs() < 1e-9, "{kind:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn single_patch_bag_is_finite_for_every_aggregator() {
        let (emb, labels) = fixture(1, 6, 35);
        for kind in AggregatorKind::ALL {
            let mut rng = derive_rng(36, "single-init");
            let model = MilModel::new(tiny_config(kind), &mut rng).unwrap();
            let fwd = model
                .forward(&emb, &labels, DropoutMode::Eval, None)
                .unwrap();
            assert!(fwd.logit.is_finite(), "{kind:?}");
        }
    }

    #[test]
    fn param_count_agrees_with_closed_forms() {
        let mut rng = derive_rng(37, "count-init");
        for kind in AggregatorKind::ALL {
            for use_ffn in [true, false] {
                for use_tissue in [true, false] {
                    for placement in [NormPlacement::Pre, NormPlacement::Post] {
                        for n_layers in [1, 2] {
                            let mut c = tiny_config(kind);
                            c.use_ffn = use_ffn;
                            c.use_tissue_encoding = use_tissue;
                            c.norm_placement = placement;
                            c.attention.n_layers = n_layers;
                            let model = MilModel::new(c.clone(), &mut rng).unwrap();
                            assert_eq!(
                                model.param_count(),
                                expected_param_count(&c),
                                "{kind:?} ffn={use_ffn} tissue={use_tissue} l={n_layers}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn gradcheck_passes_for_every_aggregator() {
        let (emb, labels) = fixture(5, 6, 38);
        for kind in AggregatorKind::ALL {
            let mut rng = derive_rng(39, "gradcheck-init");
            let mut model = MilModel::new(tiny_config(kind), &mut rng).unwrap();
            let report = gradcheck(
                &mut model,
                |m| {
                    let fwd = m.forward(&emb, &labels, DropoutMode::Eval, None)?;
                    Ok(fwd.logit * fwd.logit)
                },
                |m| {
                    m.zero_grads();
                    let fwd = m.forward(&emb, &labels, DropoutMode::Eval, None)?;
                    m.backward(&fwd, 2.0 * fwd.logit)?;
                    Ok(m.grads())
                },
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(
                report.passed(1e-4),
                "{kind:?}: worst {} at {}[{}]",
                report.max_rel_err,
                report.worst_param,
                report.worst_index
            );
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let (emb, labels) = fixture(6, 6, 40);
        for kind in AggregatorKind::ALL {
            let mut rng = derive_rng(41, "attn-init");
            let mut c = tiny_config(kind);
            c.attention.n_layers = 2;
            let model = MilModel::new(c, &mut rng).unwrap();
            let fwd = model
                .forward(&emb, &labels, DropoutMode::Eval, None)
                .unwrap();
            let maps = model.attention_maps(&fwd);
            assert!(!maps.is_empty());
            for map in &maps {
                for i in 0..map.weights.rows() {
                    let s: f64 = map.weights.row(i).iter().sum();
                    assert!(
                        (s - 1.0).abs() < 1e-12,
                        "{kind:?} {}/{}/{} row {i}: {s}",
                        map.block,
                        map.site,
                        map.head
                    );
                }
            }
        }
    }

    #[test]
    fn train_mode_dropout_needs_an_rng() {
        let (emb, labels) = fixture(4, 6, 42);
        let mut rng = derive_rng(43, "dropout-init");
        let model = MilModel::new(tiny_config(AggregatorKind::AsymTransDec), &mut rng).unwrap();
        assert!(model
            .forward(&emb, &labels, DropoutMode::Train, None)
            .is_err());
        let mut drop_rng = derive_rng(44, "dropout-draw");
        assert!(model
            .forward(&emb, &labels, DropoutMode::Train, Some(&mut drop_rng))
            .is_ok());
        // the gated-pool aggregator never applies dropout, so no rng needed
        let model = MilModel::new(tiny_config(AggregatorKind::Abmil), &mut rng).unwrap();
        assert!(model
            .forward(&emb, &labels, DropoutMode::Train, None)
            .is_ok());
    }

    #[test]
    fn tissue_encoding_adds_the_right_row() {
        let table = Tensor::from_vec(
            &[3, 2],
            vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
        )
        .unwrap();
        let emb = Tensor::from_vec(&[3, 2], vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap();
        let labels = vec![TissueLabel::BG, TissueLabel::CA, TissueLabel::CS];
        let out = apply_tissue_encoding(&emb, &labels, &table).unwrap();
        assert_eq!(
            out.data(),
            &[51.0, 61.0, 12.0, 22.0, 33.0, 43.0]
        );
        // label count must match patch count
        assert!(apply_tissue_encoding(&emb, &labels[..2], &table).is_err());
    }

    #[test]
    fn forward_rejects_mismatched_shapes() {
        let mut rng = derive_rng(45, "reject-init");
        let model = MilModel::new(tiny_config(AggregatorKind::AsymTransDec), &mut rng).unwrap();
        let (emb, labels) = fixture(4, 8, 46); // wrong d_kv
        assert!(model
            .forward(&emb, &labels, DropoutMode::Eval, None)
            .is_err());
        let (emb, labels) = fixture(4, 6, 47);
        assert!(model
            .forward(&emb, &labels[..3], DropoutMode::Eval, None)
            .is_err());
    }

    #[test]
    fn eval_forward_is_bitwise_deterministic() {
        let (emb, labels) = fixture(5, 6, 48);
        let mut rng = derive_rng(49, "determinism-init");
        let model = MilModel::new(tiny_config(AggregatorKind::AsymTransDec), &mut rng).unwrap();
        let a = model
            .forward(&emb, &labels, DropoutMode::Eval, None)
            .unwrap()
            .logit;
        let b = model
            .forward(&emb, &labels, DropoutMode::Eval, None)
            .unwrap()
            .logit;
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
