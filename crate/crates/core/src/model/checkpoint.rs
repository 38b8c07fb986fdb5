//! Binary checkpoints: the model config as JSON plus every parameter tensor,
//! little-endian f64. No optimizer state — a checkpoint pins the model alone,
//! and two saves of the same model are byte-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::model::aggregator::MilModel;
use crate::model::config::ModelConfig;
use crate::rng::derive_rng;

const MAGIC: &[u8; 8] = b"SLMLCKPT";
const VERSION: u32 = 1;

pub fn save_checkpoint(model: &MilModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut n_tensors = 0u32;
    model.visit_params(&mut |_, _| n_tensors += 1);
    let mut io: std::io::Result<()> = (|| {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        let cfg = serde_json::to_vec(&model.config).expect("model config serializes");
        w.write_u32::<LittleEndian>(cfg.len() as u32)?;
        w.write_all(&cfg)?;
        w.write_u32::<LittleEndian>(n_tensors)?;
        Ok(())
    })();
    model.visit_params(&mut |name, p| {
        if io.is_err() {
            return;
        }
        io = (|| {
            let bytes = name.as_bytes();
            w.write_u16::<LittleEndian>(u16::try_from(bytes.len()).expect("short name"))?;
            w.write_all(bytes)?;
            w.write_u8(p.shape().len() as u8)?;
            for &d in p.shape() {
                w.write_u32::<LittleEndian>(d as u32)?;
            }
            for &v in p.value.data() {
                w.write_f64::<LittleEndian>(v)?;
            }
            Ok(())
        })();
    });
    io.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<MilModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |reason: String| Error::BadCheckpoint {
        path: path.to_path_buf(),
        reason,
    };

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| bad("file too short for header".into()))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| bad("truncated header".into()))?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let cfg_len = r
        .read_u32::<LittleEndian>()
        .map_err(|_| bad("truncated header".into()))? as usize;
    if cfg_len > 1 << 20 {
        return Err(bad(format!("implausible config length {cfg_len}")));
    }
    let mut cfg_bytes = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_bytes)
        .map_err(|_| bad("truncated config".into()))?;
    let config: ModelConfig =
        serde_json::from_slice(&cfg_bytes).map_err(|e| bad(format!("config: {e}")))?;

    let mut init_rng = derive_rng(0, "checkpoint-load");
    let mut model = MilModel::new(config, &mut init_rng)?;
    let mut expected: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    model.visit_params(&mut |name, p| {
        expected.insert(name, p.shape().to_vec());
    });

    let n_tensors = r
        .read_u32::<LittleEndian>()
        .map_err(|_| bad("truncated tensor count".into()))? as usize;
    if n_tensors != expected.len() {
        return Err(bad(format!(
            "model has {} parameter tensors, checkpoint holds {n_tensors}",
            expected.len()
        )));
    }
    let mut seen = BTreeSet::new();
    for _ in 0..n_tensors {
        let name_len = r
            .read_u16::<LittleEndian>()
            .map_err(|_| bad("truncated tensor record".into()))? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)
            .map_err(|_| bad("truncated tensor name".into()))?;
        let name =
            String::from_utf8(name_bytes).map_err(|_| bad("tensor name is not utf-8".into()))?;
        let shape = expected
            .get(&name)
            .ok_or_else(|| bad(format!("unknown parameter {name}")))?;
        if !seen.insert(name.clone()) {
            return Err(bad(format!("duplicate parameter {name}")));
        }
        let ndim = r
            .read_u8()
            .map_err(|_| bad("truncated tensor record".into()))? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(
                r.read_u32::<LittleEndian>()
                    .map_err(|_| bad("truncated tensor dims".into()))? as usize,
            );
        }
        if &dims != shape {
            return Err(bad(format!(
                "parameter {name}: shape {dims:?} does not match model shape {shape:?}"
            )));
        }
        let numel = dims.iter().product();
        let mut values = vec![0.0f64; numel];
        r.read_f64_into::<LittleEndian>(&mut values)
            .map_err(|_| bad(format!("truncated values for {name}")))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("non-finite value in {name}")));
        }
        let mut pending = Some(values);
        model.visit_params_mut(&mut |n, p| {
            if n == name {
                p.value
                    .data_mut()
                    .copy_from_slice(&pending.take().expect("single match"));
            }
        });
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(bad("trailing bytes after last tensor".into()));
    }
    Ok(model)
}
