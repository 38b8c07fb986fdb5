//! Dataset manifest: a line-oriented text index of bags.
//!
//! ```text
//! slidemil-manifest v1
//! d_kv 64
//! # bag_id <TAB> embedding_path <TAB> tissue_path <TAB> labels
//! bag00000	shards/bag00000.emb	shards/bag00000.tis	mut=1
//! bag00001	shards/bag00001.emb	shards/bag00001.tis	mut=0,other=1
//! ```
//!
//! Paths are relative to the manifest's directory. The labels field is a
//! comma-separated list of `task=0|1` pairs, or `-` when the bag carries
//! no labels. `#` lines and blank lines are ignored.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::shard::{read_embedding_shard, read_tissue_shard};
use crate::data::types::Bag;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MANIFEST_HEADER: &str = "slidemil-manifest v1";

#[derive(Debug, Clone)]
pub struct ManifestRecord {
    pub bag_id: String,
    pub emb_path: PathBuf,
    pub tissue_path: PathBuf,
    pub labels: BTreeMap<String, u8>,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub d_kv: usize,
    /// Directory all record paths are resolved against.
    pub root: PathBuf,
    records: Vec<ManifestRecord>,
    index: BTreeMap<String, usize>,
}

impl Manifest {
    pub fn new(d_kv: usize, root: PathBuf, records: Vec<ManifestRecord>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, rec) in records.iter().enumerate() {
            if index.insert(rec.bag_id.clone(), i).is_some() {
                return Err(Error::DuplicateBagId(rec.bag_id.clone()));
            }
            for (task, &label) in &rec.labels {
                if label > 1 {
                    return Err(Error::InvalidInput(format!(
                        "bag {}: label {task}={label} not in {{0,1}}",
                        rec.bag_id
                    )));
                }
            }
        }
        Ok(Self {
            d_kv,
            root,
            records,
            index,
        })
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn bag_ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.bag_id.clone()).collect()
    }

    pub fn record(&self, bag_id: &str) -> Result<&ManifestRecord> {
        self.index
            .get(bag_id)
            .map(|&i| &self.records[i])
            .ok_or_else(|| Error::UnknownBagId(bag_id.to_string()))
    }

    /// Bags carrying a label for `task`, as `(bag_id, label)` in manifest order.
    pub fn task_labels(&self, task: &str) -> Vec<(String, u8)> {
        self.records
            .iter()
            .filter_map(|r| r.labels.get(task).map(|&l| (r.bag_id.clone(), l)))
            .collect()
    }

    pub fn load_bag(&self, bag_id: &str, task: &str) -> Result<Bag> {
        let rec = self.record(bag_id)?;
        let label = *rec.labels.get(task).ok_or_else(|| Error::MissingLabel {
            bag_id: bag_id.to_string(),
            task: task.to_string(),
        })?;
        let emb_path = self.root.join(&rec.emb_path);
        let tis_path = self.root.join(&rec.tissue_path);
        let (np, d_kv, data) = read_embedding_shard(&emb_path)?;
        if d_kv != self.d_kv {
            return Err(Error::BadShard {
                path: emb_path,
                reason: format!("d_kv {d_kv} does not match manifest d_kv {}", self.d_kv),
            });
        }
        let tissue = read_tissue_shard(&tis_path)?;
        if tissue.len() != np {
            return Err(Error::BadShard {
                path: emb_path,
                reason: format!(
                    "embedding shard has {np} patches but tissue shard has {}",
                    tissue.len()
                ),
            });
        }
        Bag::new(bag_id, Tensor::from_vec(&[np, d_kv], data)?, tissue, label, task)
    }

    /// Serialize to the text format. Paths are written as stored
    /// (relative to `root`).
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(MANIFEST_HEADER);
        out.push('\n');
        out.push_str(&format!("d_kv {}\n", self.d_kv));
        out.push_str("# bag_id\temb_path\ttissue_path\tlabels\n");
        for rec in &self.records {
            let labels = if rec.labels.is_empty() {
                "-".to_string()
            } else {
                rec.labels
                    .iter()
                    .map(|(t, l)| format!("{t}={l}"))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                rec.bag_id,
                rec.emb_path.display(),
                rec.tissue_path.display(),
                labels
            ));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Parse and validate a manifest file. Every referenced shard path must
/// exist on disk at load time.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."));
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };

    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file".into()))?;
    if header.trim() != MANIFEST_HEADER {
        return Err(parse_err(1, format!("expected header '{MANIFEST_HEADER}'")));
    }
    let (_, dkv_line) = lines
        .next()
        .ok_or_else(|| parse_err(2, "missing d_kv line".into()))?;
    let d_kv = dkv_line
        .trim()
        .strip_prefix("d_kv ")
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .ok_or_else(|| parse_err(2, format!("expected 'd_kv <n>', got '{dkv_line}'")))?;

    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(
                line_no,
                format!("expected 4 tab-separated fields, got {}", fields.len()),
            ));
        }
        let mut labels = BTreeMap::new();
        if fields[3] != "-" {
            for pair in fields[3].split(',') {
                let (task, value) = pair.split_once('=').ok_or_else(|| {
                    parse_err(line_no, format!("bad label pair '{pair}', expected task=0|1"))
                })?;
                let value: u8 = value.parse().map_err(|_| {
                    parse_err(line_no, format!("bad label value in '{pair}'"))
                })?;
                if value > 1 {
                    return Err(parse_err(line_no, format!("label '{pair}' not in {{0,1}}")));
                }
                if labels.insert(task.to_string(), value).is_some() {
                    return Err(parse_err(line_no, format!("duplicate task '{task}'")));
                }
            }
        }
        records.push(ManifestRecord {
            bag_id: fields[0].to_string(),
            emb_path: PathBuf::from(fields[1]),
            tissue_path: PathBuf::from(fields[2]),
            labels,
        });
    }

    let manifest = Manifest::new(d_kv, root, records)?;
    for rec in manifest.records() {
        for rel in [&rec.emb_path, &rec.tissue_path] {
            let p = manifest.root.join(rel);
            if !p.exists() {
                return Err(Error::MissingFile(p));
            }
        }
    }
    Ok(manifest)
}
