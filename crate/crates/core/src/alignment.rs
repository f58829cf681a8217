//! Sample-level class segmentations and their conversion to per-frame
//! training targets.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::MfccConfig;
use crate::manifest::{read_jsonl, write_jsonl};

/// Class id 0 is reserved for silence.
pub const SILENCE_CLASS: usize = 0;

/// `class` occupies samples `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub class: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Alignment {
    pub utt_id: String,
    pub num_samples: usize,
    /// Contiguous, ordered, covering `0..num_samples`.
    pub segments: Vec<Segment>,
}

impl Alignment {
    pub fn validate(&self) -> Result<()> {
        let mut pos = 0;
        for s in &self.segments {
            if s.start != pos || s.end <= s.start {
                return Err(Error::data(format!("{}: segments must tile the signal", self.utt_id)));
            }
            pos = s.end;
        }
        if pos != self.num_samples {
            return Err(Error::data(format!("{}: segments end at {pos}, signal has {}", self.utt_id, self.num_samples)));
        }
        Ok(())
    }

    /// Class at sample `n`, clamped to the last segment.
    pub fn class_at(&self, n: usize) -> usize {
        let k = self.segments.partition_point(|s| s.end <= n);
        self.segments[k.min(self.segments.len() - 1)].class
    }

    /// The segmentation of a copy played back `factor` times faster: every
    /// boundary `b` moves to `round(b / factor)`.
    pub fn speed_scaled(&self, factor: f64, new_len: usize) -> Alignment {
        let map = |b: usize| (((b as f64) / factor).round() as usize).min(new_len);
        let mut segments: Vec<Segment> = Vec::with_capacity(self.segments.len());
        for s in &self.segments {
            let (start, end) = (map(s.start), map(s.end));
            if end > start {
                segments.push(Segment {
                    class: s.class,
                    start,
                    end,
                });
            }
        }
        if let Some(last) = segments.last_mut() {
            last.end = new_len;
        }
        Alignment {
            utt_id: self.utt_id.clone(),
            num_samples: new_len,
            segments,
        }
    }

    /// Per-frame targets: the class under each frame's centre sample.
    pub fn frame_targets(&self, cfg: &MfccConfig) -> Vec<usize> {
        let (w, sh) = (cfg.window_samples(), cfg.shift_samples());
        (0..cfg.num_frames(self.num_samples)).map(|t| self.class_at(t * sh + w / 2)).collect()
    }

    /// Class sequence with silence removed and repeats kept, one entry per segment.
    pub fn class_sequence(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.class).filter(|&c| c != SILENCE_CLASS).collect()
    }
}

pub fn read_alignments(path: &Path) -> Result<BTreeMap<String, Alignment>> {
    let v: Vec<Alignment> = read_jsonl(path)?;
    let mut out = BTreeMap::new();
    for a in v {
        a.validate()?;
        if let Some(dup) = out.insert(a.utt_id.clone(), a) {
            return Err(Error::data(format!("duplicate alignment for {}", dup.utt_id)));
        }
    }
    Ok(out)
}

pub fn write_alignments<'a>(path: &Path, alignments: impl IntoIterator<Item = &'a Alignment>) -> Result<()> {
    let v: Vec<&Alignment> = alignments.into_iter().collect();
    write_jsonl(path, &v)
}
