//! Checkpoint file layout:
//!
//! ```text
//! b"AMCKPT01"            magic
//! u32 LE                 format version
//! u32 LE                 header length in bytes
//! JSON header            config, training metadata, tensor names and shapes
//! f64 LE                 tensor data, concatenated in header order
//! ```
//!
//! The input normalization (`input.shift`, `input.scale`) is stored ahead of
//! the trainable tensors.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayViewD, ArrayViewMutD};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::{build_model, layer_tensors_mut, Checkpoint, Model, TrainingMeta};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"AMCKPT01";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    meta: TrainingMeta,
    dtype: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn all_tensors(m: &Model) -> Vec<(String, ArrayViewD<'_, f64>)> {
    let mut v = vec![
        ("input.shift".to_string(), m.input_norm.shift.view().into_dyn()),
        ("input.scale".to_string(), m.input_norm.scale.view().into_dyn()),
    ];
    v.extend(m.tensors());
    v
}

fn all_tensors_mut(m: &mut Model) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
    let mut v = vec![
        ("input.shift".to_string(), m.input_norm.shift.view_mut().into_dyn()),
        ("input.scale".to_string(), m.input_norm.scale.view_mut().into_dyn()),
    ];
    v.extend(layer_tensors_mut(&mut m.hidden, &mut m.output));
    v
}

pub fn serialize_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let tensors = all_tensors(&ck.model);
    let header = Header {
        config: ck.model.config.clone(),
        meta: ck.meta.clone(),
        dtype: "f64".into(),
        tensors: tensors
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 8 * ck.model.num_parameters());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn deserialize_checkpoint(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() < hlen {
        return Err("truncated header".into());
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| format!("bad header: {e}"))?;
    if header.dtype != "f64" {
        return Err(format!("unsupported dtype {}", header.dtype));
    }
    let mut ck = build_model(&header.config, 0).map_err(|e| e.to_string())?;
    ck.meta = header.meta;
    let mut data = body[hlen..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut tensors = all_tensors_mut(&mut ck.model);
    if tensors.len() != header.tensors.len() {
        return Err(format!("header lists {} tensors, config implies {}", header.tensors.len(), tensors.len()));
    }
    for ((name, t), entry) in tensors.iter_mut().zip(&header.tensors) {
        if *name != entry.name || t.shape() != entry.shape.as_slice() {
            return Err(format!("tensor {} {:?} does not match config ({name} {:?})", entry.name, entry.shape, t.shape()));
        }
        for v in t.iter_mut() {
            *v = data.next().ok_or("truncated tensor data")?;
        }
    }
    drop(tensors);
    if data.next().is_some() {
        return Err("trailing bytes after tensor data".into());
    }
    Ok(ck)
}

pub fn write_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = serialize_checkpoint(ck);
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    deserialize_checkpoint(&bytes).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut ck = build_model(&ModelConfig::desk(12), 21).unwrap();
        ck.meta.stage = "stage1".into();
        ck.meta.epoch = 4;
        ck.model.input_norm.shift[3] = 0.125;
        let bytes = serialize_checkpoint(&ck);
        let back = deserialize_checkpoint(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(serialize_checkpoint(&back), bytes);
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let ck = build_model(&ModelConfig::desk(8), 2).unwrap();
        write_checkpoint(&ck, &p).unwrap();
        assert_eq!(read_checkpoint(&p).unwrap(), ck);
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_checkpoint(&p), Err(Error::Format { .. })));
        assert!(deserialize_checkpoint(b"nonsense").is_err());
    }
}
