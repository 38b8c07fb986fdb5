//! Cross-validation reports. Reports carry no timing information — two runs
//! with the same seed serialize to identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    /// Validation AUROC at the best epoch.
    pub auroc: f64,
    pub best_epoch: usize,
    /// Mean training loss per epoch.
    pub train_losses: Vec<f64>,
    /// Validation AUROC per epoch.
    pub val_aurocs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskResult {
    pub task: String,
    pub mean_auroc: f64,
    /// Sample standard deviation over folds (n - 1 in the denominator).
    pub std_auroc: f64,
    pub folds: Vec<FoldResult>,
}

impl TaskResult {
    pub fn from_folds(task: impl Into<String>, folds: Vec<FoldResult>) -> Self {
        let n = folds.len();
        let mean = folds.iter().map(|f| f.auroc).sum::<f64>() / n as f64;
        let std = if n > 1 {
            (folds
                .iter()
                .map(|f| (f.auroc - mean).powi(2))
                .sum::<f64>()
                / (n - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        Self {
            task: task.into(),
            mean_auroc: mean,
            std_auroc: std,
            folds,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregator: String,
    pub seed: u64,
    /// First 12 hex digits of the sha-256 of the serialized train config.
    pub config_hash: String,
    pub k_folds: usize,
    pub tasks: Vec<TaskResult>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })
    }

    /// Plain-text summary with one column per task.
    pub fn render_table(&self) -> String {
        let label_w = 12;
        let col_w = self
            .tasks
            .iter()
            .map(|t| t.task.len())
            .chain([8])
            .max()
            .unwrap()
            + 2;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "aggregator {}  seed {}  config {}",
            self.aggregator, self.seed, self.config_hash
        );
        let _ = write!(out, "{:label_w$}", "");
        for t in &self.tasks {
            let _ = write!(out, "{:>col_w$}", t.task);
        }
        out.push('\n');
        let mut row = |label: &str, vals: Vec<Option<f64>>| {
            let _ = write!(out, "{label:label_w$}");
            for v in vals {
                match v {
                    Some(v) => {
                        let _ = write!(out, "{v:>col_w$.4}");
                    }
                    None => {
                        let _ = write!(out, "{:>col_w$}", "-");
                    }
                }
            }
            out.push('\n');
        };
        row(
            "mean AUROC",
            self.tasks.iter().map(|t| Some(t.mean_auroc)).collect(),
        );
        row(
            "std AUROC",
            self.tasks.iter().map(|t| Some(t.std_auroc)).collect(),
        );
        let max_folds = self.tasks.iter().map(|t| t.folds.len()).max().unwrap_or(0);
        for f in 0..max_folds {
            row(
                &format!("fold {f}"),
                self.tasks
                    .iter()
                    .map(|t| t.folds.get(f).map(|fr| fr.auroc))
                    .collect(),
            );
        }
        out
    }
}
