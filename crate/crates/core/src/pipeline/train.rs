//! Cross-validated training of one aggregator on one task.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{stratified_sample, Bag, Manifest, TissueFractions, DEFAULT_TISSUE_RATIOS};
use crate::error::{Error, Result};
use crate::model::{MilModel, ModelConfig};
use crate::numerics::ops::DropoutMode;
use crate::pipeline::folds::stratified_kfold;
use crate::pipeline::loss::bce_with_logits;
use crate::pipeline::metrics::auroc;
use crate::pipeline::optim::{adamw_step, AdamWParams};
use crate::pipeline::report::{EvalReport, FoldResult, TaskResult};
use crate::pipeline::schedule::cosine_lr;
use crate::rng::{derive_rng, sha256_hex};

fn default_lr() -> f64 {
    2e-4
}
fn default_weight_decay() -> f64 {
    0.01
}
fn default_epochs() -> usize {
    10
}
fn default_scheduler_t() -> usize {
    10
}
fn default_eta_min() -> f64 {
    1e-6
}
fn default_batch_size() -> usize {
    128
}
fn default_task() -> String {
    "mut".to_string()
}
fn default_k_folds() -> usize {
    5
}
fn default_n_target() -> usize {
    512
}
fn default_ratios() -> Option<[f64; 3]> {
    Some(DEFAULT_TISSUE_RATIOS)
}

fn ser_ratios<S: serde::Serializer>(v: &Option<[f64; 3]>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(r) => r.as_slice().serialize(s),
        None => [0f64; 0].as_slice().serialize(s),
    }
}

fn de_ratios<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> std::result::Result<Option<[f64; 3]>, D::Error> {
    let v = Vec::<f64>::deserialize(d)?;
    match v.len() {
        0 => Ok(None),
        3 => Ok(Some([v[0], v[1], v[2]])),
        n => Err(serde::de::Error::custom(format!(
            "sampling_ratios needs 3 entries (CA/CS/BG) or [] to disable sampling, got {n}"
        ))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Cosine horizon in epochs; the LR reaches `eta_min` here and stays.
    #[serde(default = "default_scheduler_t")]
    pub scheduler_t: usize,
    #[serde(default = "default_eta_min")]
    pub eta_min: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_task")]
    pub task: String,
    #[serde(default = "default_k_folds")]
    pub k_folds: usize,
    /// Patches drawn per bag each epoch (when sampling is on).
    #[serde(default = "default_n_target")]
    pub n_target: usize,
    /// `None` trains on full bags; `Some` resamples each bag every epoch,
    /// stratified by tissue class at these CA/CS/BG ratios. In TOML an
    /// empty array spells `None`, since TOML has no null.
    #[serde(
        default = "default_ratios",
        serialize_with = "ser_ratios",
        deserialize_with = "de_ratios"
    )]
    pub sampling_ratios: Option<[f64; 3]>,
    /// Multiplier on the positive-class loss term.
    #[serde(default)]
    pub pos_weight: Option<f64>,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            lr: default_lr(),
            weight_decay: default_weight_decay(),
            epochs: default_epochs(),
            scheduler_t: default_scheduler_t(),
            eta_min: default_eta_min(),
            batch_size: default_batch_size(),
            seed: 0,
            task: default_task(),
            k_folds: default_k_folds(),
            n_target: default_n_target(),
            sampling_ratios: default_ratios(),
            pos_weight: None,
            model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |name: &'static str, reason: String| Error::InvalidParameter { name, reason };
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(bad("lr", format!("need a positive rate, got {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(bad(
                "weight_decay",
                format!("need a non-negative decay, got {}", self.weight_decay),
            ));
        }
        if self.epochs == 0 {
            return Err(bad("epochs", "need at least one epoch".into()));
        }
        if self.scheduler_t == 0 {
            return Err(bad("scheduler_t", "need a horizon of at least 1".into()));
        }
        if !(self.eta_min >= 0.0 && self.eta_min <= self.lr) {
            return Err(bad(
                "eta_min",
                format!("need 0 <= eta_min <= lr, got {}", self.eta_min),
            ));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "need at least 1".into()));
        }
        if self.k_folds < 2 {
            return Err(bad("k_folds", format!("need at least 2, got {}", self.k_folds)));
        }
        if self.n_target == 0 {
            return Err(bad("n_target", "need at least one patch per bag".into()));
        }
        if let Some(r) = self.sampling_ratios {
            TissueFractions::new(r[0], r[1], r[2])?;
        }
        if let Some(w) = self.pos_weight {
            if !(w.is_finite() && w > 0.0) {
                return Err(bad("pos_weight", format!("need a positive weight, got {w}")));
            }
        }
        if self.task.is_empty() || self.task.contains(['\t', '\n', '=']) {
            return Err(bad("task", format!("bad task name {:?}", self.task)));
        }
        Ok(())
    }

    /// First 12 hex digits of the sha-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        sha256_hex(&json)[..12].to_string()
    }
}

/// Run stratified k-fold cross-validation for `config.task`. Returns the
/// per-fold results and the model from the best fold (highest validation
/// AUROC; the earliest such fold on ties).
pub fn train_task(
    manifest: &Manifest,
    config: &TrainConfig,
    jobs: usize,
) -> Result<(TaskResult, MilModel)> {
    config.validate()?;
    if config.model.attention.d_kv != manifest.d_kv {
        return Err(Error::InvalidInput(format!(
            "model d_kv {} does not match manifest d_kv {}",
            config.model.attention.d_kv, manifest.d_kv
        )));
    }
    let pairs = manifest.task_labels(&config.task);
    if pairs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no bag in the manifest carries a label for task {:?}",
            config.task
        )));
    }
    let bags: Vec<Bag> = pairs
        .iter()
        .map(|(id, _)| manifest.load_bag(id, &config.task))
        .collect::<Result<_>>()?;
    let labels: Vec<u8> = pairs.iter().map(|&(_, l)| l).collect();
    let folds = stratified_kfold(&labels, config.k_folds, config.seed)?;

    let run = |f: usize| train_fold(&bags, &labels, &folds, f, config);
    let results: Vec<(FoldResult, MilModel)> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
        pool.install(|| {
            (0..config.k_folds)
                .into_par_iter()
                .map(run)
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        (0..config.k_folds).map(run).collect::<Result<Vec<_>>>()?
    };

    let mut best = 0;
    for i in 1..results.len() {
        if results[i].0.auroc > results[best].0.auroc {
            best = i;
        }
    }
    let mut fold_results = Vec::with_capacity(results.len());
    let mut models = Vec::with_capacity(results.len());
    for (fr, m) in results {
        fold_results.push(fr);
        models.push(m);
    }
    let model = models.swap_remove(best);
    Ok((TaskResult::from_folds(&config.task, fold_results), model))
}

/// `train_task` wrapped into a serializable report.
pub fn crossval(manifest: &Manifest, config: &TrainConfig, jobs: usize) -> Result<EvalReport> {
    let (task, _) = train_task(manifest, config, jobs)?;
    Ok(EvalReport {
        aggregator: config.model.aggregator.name().to_string(),
        seed: config.seed,
        config_hash: config.hash(),
        k_folds: config.k_folds,
        tasks: vec![task],
    })
}

fn train_fold(
    bags: &[Bag],
    labels: &[u8],
    folds: &[Vec<usize>],
    f: usize,
    cfg: &TrainConfig,
) -> Result<(FoldResult, MilModel)> {
    let mut in_val = vec![false; bags.len()];
    for &i in &folds[f] {
        in_val[i] = true;
    }
    let train_idx: Vec<usize> = (0..bags.len()).filter(|&i| !in_val[i]).collect();
    let val_idx = &folds[f];

    let mut init_rng = derive_rng(cfg.seed, &format!("fold{f}/init"));
    let mut model = MilModel::new(cfg.model.clone(), &mut init_rng)?;
    let pos_weight = cfg.pos_weight.unwrap_or(1.0);

    let mut t_step = 0usize;
    let mut train_losses = Vec::with_capacity(cfg.epochs);
    let mut val_aurocs = Vec::with_capacity(cfg.epochs);
    let mut best_auroc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_snap: BTreeMap<String, Vec<f64>> = BTreeMap::new();

    for e in 0..cfg.epochs {
        let opt = AdamWParams::new(
            cosine_lr(e, cfg.scheduler_t, cfg.lr, cfg.eta_min),
            cfg.weight_decay,
        );
        let mut order = train_idx.clone();
        order.shuffle(&mut derive_rng(cfg.seed, &format!("fold{f}/epoch{e}/shuffle")));
        let mut epoch_loss = 0.0;
        let mut n_seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            model.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &bi in batch {
                let bag = &bags[bi];
                let sampled;
                let (emb, tis) = match cfg.sampling_ratios {
                    Some(r) => {
                        let mut srng = derive_rng(
                            cfg.seed,
                            &format!("fold{f}/epoch{e}/bag{}/sample", bag.bag_id),
                        );
                        let idx = stratified_sample(bag, cfg.n_target, r, &mut srng)?;
                        sampled = bag.subset(&idx)?;
                        (&sampled.embeddings, &sampled.tissue)
                    }
                    None => (&bag.embeddings, &bag.tissue),
                };
                let mut drng = derive_rng(
                    cfg.seed,
                    &format!("fold{f}/epoch{e}/bag{}/dropout", bag.bag_id),
                );
                let fwd = model.forward(emb, tis, DropoutMode::Train, Some(&mut drng))?;
                let (loss, dlogit) = bce_with_logits(fwd.logit, labels[bi] as f64, pos_weight);
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss(format!(
                        "fold {f} epoch {e} bag {}: loss {loss} at logit {}",
                        bag.bag_id, fwd.logit
                    )));
                }
                model.backward(&fwd, dlogit * scale)?;
                epoch_loss += loss;
                n_seen += 1;
            }
            t_step += 1;
            let mut step_err = None;
            model.visit_params_mut(&mut |_, p| {
                if step_err.is_none() {
                    if let Err(err) = adamw_step(p, t_step, &opt) {
                        step_err = Some(err);
                    }
                }
            });
            if let Some(err) = step_err {
                return Err(err);
            }
        }
        train_losses.push(epoch_loss / n_seen.max(1) as f64);

        // validate on the held-out fold, full bags, no dropout
        let scores: Vec<f64> = val_idx
            .iter()
            .map(|&vi| {
                model
                    .forward(
                        &bags[vi].embeddings,
                        &bags[vi].tissue,
                        DropoutMode::Eval,
                        None,
                    )
                    .map(|fwd| fwd.logit)
            })
            .collect::<Result<_>>()?;
        let val_labels: Vec<u8> = val_idx.iter().map(|&vi| labels[vi]).collect();
        let va = auroc(&scores, &val_labels)?;
        val_aurocs.push(va);
        if va > best_auroc {
            best_auroc = va;
            best_epoch = e;
            best_snap.clear();
            model.visit_params(&mut |n, p| {
                best_snap.insert(n, p.value.data().to_vec());
            });
        }
    }
    model.visit_params_mut(&mut |n, p| {
        if let Some(v) = best_snap.get(&n) {
            p.value.data_mut().copy_from_slice(v);
        }
    });
    Ok((
        FoldResult {
            fold: f,
            auroc: best_auroc,
            best_epoch,
            train_losses,
            val_aurocs,
        },
        model,
    ))
}
