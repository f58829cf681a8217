//! Corpus manifests: one JSON object per line describing an utterance.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker_id: String,
    pub audio_path: String,
    pub transcript: Vec<String>,
    pub condition_tag: String,
    pub duration_s: f64,
}

/// An ordered, validated list of utterances.
///
/// Relative `audio_path`s are resolved against `base_dir`, which is the
/// directory the manifest was read from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub utterances: Vec<Utterance>,
    pub base_dir: Option<PathBuf>,
}

impl Manifest {
    pub fn new(utterances: Vec<Utterance>) -> Result<Self> {
        let m = Manifest {
            utterances,
            base_dir: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for u in &self.utterances {
            if u.utt_id.is_empty() || u.speaker_id.is_empty() {
                return Err(Error::data("utterance with empty utt_id or speaker_id"));
            }
            if !seen.insert(u.utt_id.as_str()) {
                return Err(Error::data(format!("duplicate utt_id {}", u.utt_id)));
            }
            if u.transcript.iter().any(|w| w.trim().is_empty()) {
                return Err(Error::data(format!("{}: empty transcript token", u.utt_id)));
            }
            if !(u.duration_s >= 0.0 && u.duration_s.is_finite()) {
                return Err(Error::data(format!("{}: bad duration", u.utt_id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter()
    }

    pub fn speakers(&self) -> BTreeSet<&str> {
        self.utterances.iter().map(|u| u.speaker_id.as_str()).collect()
    }

    pub fn by_speaker(&self) -> BTreeMap<&str, Vec<&Utterance>> {
        let mut map: BTreeMap<&str, Vec<&Utterance>> = BTreeMap::new();
        for u in &self.utterances {
            map.entry(u.speaker_id.as_str()).or_default().push(u);
        }
        map
    }

    pub fn total_duration_s(&self) -> f64 {
        self.utterances.iter().map(|u| u.duration_s).sum()
    }

    pub fn get(&self, utt_id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.utt_id == utt_id)
    }

    /// Keeps the utterances whose ids are in `ids`, preserving order.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Manifest {
        let keep: HashSet<&str> = ids.into_iter().collect();
        Manifest {
            utterances: self
                .utterances
                .iter()
                .filter(|u| keep.contains(u.utt_id.as_str()))
                .cloned()
                .collect(),
            base_dir: self.base_dir.clone(),
        }
    }

    pub fn audio_file(&self, utt: &Utterance) -> PathBuf {
        let p = Path::new(&utt.audio_path);
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let utterances = read_jsonl(path)?;
        let m = Manifest {
            utterances,
            base_dir: path.parent().map(Path::to_path_buf),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path.as_ref(), &self.utterances)
    }
}

/// Reads newline-delimited JSON records; blank lines are skipped.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.into(),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::data(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(id: &str, spk: &str) -> Utterance {
        Utterance {
            utt_id: id.into(),
            speaker_id: spk.into(),
            audio_path: format!("{id}.wav"),
            transcript: vec!["a".into()],
            condition_tag: "clean".into(),
            duration_s: 1.0,
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(Manifest::new(vec![utt("u1", "a"), utt("u1", "b")]).is_err());
    }

    #[test]
    fn empty_token_rejected() {
        let mut u = utt("u1", "a");
        u.transcript.push(" ".into());
        assert!(Manifest::new(vec![u]).is_err());
    }

    #[test]
    fn jsonl_roundtrip_and_unknown_fields() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::new(vec![utt("u1", "a"), utt("u2", "b")]).unwrap();
        let p = dir.path().join("m.jsonl");
        m.write_jsonl(&p).unwrap();
        let back = Manifest::read_jsonl(&p).unwrap();
        assert_eq!(back.utterances, m.utterances);
        assert_eq!(back.audio_file(&back.utterances[0]), dir.path().join("u1.wav"));

        fs::write(&p, "{\"utt_id\":\"x\",\"speaker_id\":\"s\",\"audio_path\":\"a\",\"transcript\":[],\"condition_tag\":\"clean\",\"duration_s\":1,\"extra\":1}\n").unwrap();
        assert!(matches!(Manifest::read_jsonl(&p), Err(Error::Format { .. })));
    }
}
