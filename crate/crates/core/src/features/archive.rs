//! Feature archives: one binary file per utterance plus a JSONL index.
//!
//! File layout: 8-byte magic `AMFEATS1`, frame count `T` (u32 LE), dimension
//! `D` (u32 LE), then `T * D` little-endian f32 values in row-major order.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{read_jsonl, write_jsonl};

const MAGIC: &[u8; 8] = b"AMFEATS1";
const HEADER_LEN: usize = 16;
pub const INDEX_FILE: &str = "index.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveEntry {
    pub utt_id: String,
    pub path: String,
    pub frames: usize,
    pub dim: usize,
}

pub fn write_feature_file(path: &Path, m: &Array2<f64>) -> Result<()> {
    let (t, d) = m.dim();
    let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * t * d);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(t as u32).to_le_bytes());
    bytes.extend_from_slice(&(d as u32).to_le_bytes());
    for v in m.iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Format {
        path: path.into(),
        reason: reason.into(),
    };
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(bad("missing feature-file magic"));
    }
    let t = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    if bytes.len() != HEADER_LEN + 4 * t * d {
        return Err(bad("payload size does not match header"));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    Array2::from_shape_vec((t, d), values).map_err(|e| bad(&e.to_string()))
}

/// Writes `<dir>/<utt_id>.feats` for every entry and `<dir>/index.jsonl`.
pub fn write_feature_archive<'a>(
    dir: &Path,
    items: impl IntoIterator<Item = (&'a str, &'a Array2<f64>)>,
) -> Result<Vec<ArchiveEntry>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = Vec::new();
    for (utt_id, m) in items {
        let name = format!("{utt_id}.feats");
        write_feature_file(&dir.join(&name), m)?;
        index.push(ArchiveEntry {
            utt_id: utt_id.to_string(),
            path: name,
            frames: m.nrows(),
            dim: m.ncols(),
        });
    }
    write_jsonl(&dir.join(INDEX_FILE), &index)?;
    Ok(index)
}

/// Reads every matrix listed in `<dir>/index.jsonl`, in index order.
pub fn read_feature_archive(dir: &Path) -> Result<Vec<(String, Array2<f64>)>> {
    let index: Vec<ArchiveEntry> = read_jsonl(&dir.join(INDEX_FILE))?;
    index
        .into_iter()
        .map(|e| {
            let p = PathBuf::from(&e.path);
            let p = if p.is_relative() { dir.join(p) } else { p };
            let m = read_feature_file(&p)?;
            if m.dim() != (e.frames, e.dim) {
                return Err(Error::Format {
                    path: p,
                    reason: format!("index says {}x{}, file has {:?}", e.frames, e.dim, m.dim()),
                });
            }
            Ok((e.utt_id, m))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Array2::from_shape_fn((3, 2), |(i, j)| i as f64 + 0.5 * j as f64);
        let p = dir.path().join("x.feats");
        write_feature_file(&p, &m).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(&bytes[..8], b"AMFEATS1");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(read_feature_file(&p).unwrap(), m);

        let idx = write_feature_archive(dir.path(), [("u1", &m)]).unwrap();
        assert_eq!(idx[0].frames, 3);
        let back = read_feature_archive(dir.path()).unwrap();
        assert_eq!(back, vec![("u1".to_string(), m)]);
    }

    #[test]
    fn truncated_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.feats");
        fs::write(&p, b"AMFEATS1\x02\0\0\0\x02\0\0\0abc").unwrap();
        assert!(matches!(read_feature_file(&p), Err(Error::Format { .. })));
    }
}
