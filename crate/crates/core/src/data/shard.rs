//! Binary patch shards.
//!
//! Embedding shard layout (all integers little-endian):
//!   bytes 0..8   magic "EMBSHARD"
//!   bytes 8..12  format version, u32 (currently 1)
//!   bytes 12..16 num_patches, u32
//!   bytes 16..20 d_kv, u32
//!   then num_patches * d_kv float32 values, row-major
//!
//! Tissue shard layout:
//!   bytes 0..8   magic "TISSHARD"
//!   bytes 8..12  format version, u32 (currently 1)
//!   bytes 12..16 num_patches, u32
//!   then num_patches bytes of tissue codes (0=CA, 1=CS, 2=BG)
//!
//! Embeddings are stored at float32 and widened to f64 in memory; storage
//! halves and the quantization is far below the noise floor of any
//! upstream feature extractor.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::data::types::TissueLabel;
use crate::error::{Error, Result};

const EMB_MAGIC: &[u8; 8] = b"EMBSHARD";
const TIS_MAGIC: &[u8; 8] = b"TISSHARD";
const VERSION: u32 = 1;

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::BadShard {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn write_embedding_shard(path: &Path, np: usize, d_kv: usize, data: &[f64]) -> Result<()> {
    if data.len() != np * d_kv {
        return Err(bad(
            path,
            format!("{} values for shape [{np}, {d_kv}]", data.len()),
        ));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(EMB_MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(VERSION).map_err(io)?;
    w.write_u32::<LittleEndian>(np as u32).map_err(io)?;
    w.write_u32::<LittleEndian>(d_kv as u32).map_err(io)?;
    for &v in data {
        w.write_f32::<LittleEndian>(v as f32).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Returns `(np, d_kv, values)` with values widened to f64.
pub fn read_embedding_shard(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != EMB_MAGIC {
        return Err(bad(path, "bad magic, not an embedding shard"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != VERSION {
        return Err(bad(path, format!("unsupported version {version}")));
    }
    let np = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let d_kv = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    if np == 0 || d_kv == 0 {
        return Err(bad(path, format!("degenerate shape [{np}, {d_kv}]")));
    }
    let mut buf = vec![0u8; np * d_kv * 4];
    r.read_exact(&mut buf)
        .map_err(|_| bad(path, format!("truncated: expected {} payload bytes", buf.len())))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(io)? != 0 {
        return Err(bad(path, "trailing bytes after payload"));
    }
    let data = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((np, d_kv, data))
}

pub fn write_tissue_shard(path: &Path, labels: &[TissueLabel]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(TIS_MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(VERSION).map_err(io)?;
    w.write_u32::<LittleEndian>(labels.len() as u32).map_err(io)?;
    let bytes: Vec<u8> = labels.iter().map(|l| l.code()).collect();
    w.write_all(&bytes).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_tissue_shard(path: &Path) -> Result<Vec<TissueLabel>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != TIS_MAGIC {
        return Err(bad(path, "bad magic, not a tissue shard"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != VERSION {
        return Err(bad(path, format!("unsupported version {version}")));
    }
    let np = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let mut buf = vec![0u8; np];
    r.read_exact(&mut buf)
        .map_err(|_| bad(path, format!("truncated: expected {np} label bytes")))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(io)? != 0 {
        return Err(bad(path, "trailing bytes after payload"));
    }
    buf.into_iter()
        .map(|c| {
            TissueLabel::from_code(c)
                .map_err(|_| bad(path, format!("invalid tissue code {c}")))
        })
        .collect()
}
