//! Training and evaluation: loss, optimizer, LR schedule, stratified folds,
//! AUROC, and the cross-validation driver. One master seed determines every
//! random draw, so reports and checkpoints are reproducible byte for byte.

mod folds;
mod loss;
mod metrics;
mod optim;
mod report;
mod schedule;
mod train;

pub use folds::stratified_kfold;
pub use loss::bce_with_logits;
pub use metrics::auroc;
pub use optim::{adamw_step, AdamWParams};
pub use report::{EvalReport, FoldResult, TaskResult};
pub use schedule::cosine_lr;
pub use train::{crossval, train_task, TrainConfig};
