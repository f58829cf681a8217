//! Impulse-response and noise collections, and their on-disk layout.
//!
//! An RIR database is a directory with one sub-directory per room. Each room
//! directory holds `room.json` (`{"size_class": "small"}`) and one WAV file
//! per microphone position. A noise pool is a flat directory of WAV files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, resample, write_wav, AudioSignal};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeClass {
    Small,
    Medium,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub position_id: String,
    pub signal: AudioSignal,
}

/// Impulse responses of one room measured at different positions.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomGroup {
    pub room_id: String,
    pub size_class: SizeClass,
    pub rirs: Vec<Rir>,
}

impl RoomGroup {
    pub fn new(room_id: impl Into<String>, size_class: SizeClass, rirs: Vec<Rir>) -> Result<Self> {
        let g = RoomGroup {
            room_id: room_id.into(),
            size_class,
            rirs,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.rirs.first() else {
            return Err(Error::config(format!("room {} has no impulse responses", self.room_id)));
        };
        for r in &self.rirs {
            if r.signal.is_empty() {
                return Err(Error::config(format!("room {}: empty rir {}", self.room_id, r.position_id)));
            }
            if r.signal.sample_rate_hz != first.signal.sample_rate_hz {
                return Err(Error::config(format!("room {}: mixed sample rates", self.room_id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRecording {
    pub id: String,
    pub signal: AudioSignal,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoisePool {
    pub recordings: Vec<NoiseRecording>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoomMeta {
    size_class: SizeClass,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(sorted_entries(dir)?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect())
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn to_rate(signal: AudioSignal, rate: u32) -> Result<AudioSignal> {
    if signal.sample_rate_hz == rate {
        Ok(signal)
    } else {
        resample(&signal, rate)
    }
}

/// Loads every room under `dir`, resampling impulse responses to `rate`.
pub fn load_rir_database(dir: impl AsRef<Path>, rate: u32) -> Result<Vec<RoomGroup>> {
    let dir = dir.as_ref();
    let mut rooms = Vec::new();
    for room_dir in sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()) {
        let meta_path = room_dir.join("room.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: RoomMeta = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: meta_path.clone(),
            reason: e.to_string(),
        })?;
        let rirs = wav_files(&room_dir)?
            .into_iter()
            .map(|p| {
                Ok(Rir {
                    position_id: stem(&p),
                    signal: to_rate(read_wav(&p)?, rate)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rooms.push(RoomGroup::new(stem(&room_dir), meta.size_class, rirs)?);
    }
    if rooms.is_empty() {
        return Err(Error::config(format!("no rooms found under {}", dir.display())));
    }
    Ok(rooms)
}

pub fn write_rir_database(rooms: &[RoomGroup], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for room in rooms {
        let room_dir = dir.join(&room.room_id);
        fs::create_dir_all(&room_dir).map_err(|e| Error::io(&room_dir, e))?;
        let meta = serde_json::to_string(&RoomMeta {
            size_class: room.size_class,
        })
        .expect("room metadata serializes");
        let meta_path = room_dir.join("room.json");
        fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;
        for rir in &room.rirs {
            write_wav(&rir.signal, room_dir.join(format!("{}.wav", rir.position_id)))?;
        }
    }
    Ok(())
}

/// Loads every WAV file in `dir` as a noise recording resampled to `rate`.
pub fn load_noise_pool(dir: impl AsRef<Path>, rate: u32) -> Result<NoisePool> {
    let recordings = wav_files(dir.as_ref())?
        .into_iter()
        .map(|p| {
            Ok(NoiseRecording {
                id: stem(&p),
                signal: to_rate(read_wav(&p)?, rate)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NoisePool { recordings })
}

pub fn write_noise_pool(pool: &NoisePool, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for rec in &pool.recordings {
        write_wav(&rec.signal, dir.join(format!("{}.wav", rec.id)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_room_rejected() {
        assert!(RoomGroup::new("r", SizeClass::Small, vec![]).is_err());
    }

    #[test]
    fn database_roundtrip_resamples() {
        let dir = tempfile::tempdir().unwrap();
        let rir = |id: &str| Rir {
            position_id: id.into(),
            signal: AudioSignal::new(vec![0.5, 0.25, 0.125, 0.0], 8000).unwrap(),
        };
        let rooms = vec![RoomGroup::new("room1", SizeClass::Medium, vec![rir("p0"), rir("p1")]).unwrap()];
        write_rir_database(&rooms, dir.path()).unwrap();
        let back = load_rir_database(dir.path(), 16000).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].size_class, SizeClass::Medium);
        assert_eq!(back[0].rirs.len(), 2);
        assert_eq!(back[0].rirs[1].position_id, "p1");
        assert_eq!(back[0].rirs[0].signal.sample_rate_hz, 16000);
        assert_eq!(back[0].rirs[0].signal.len(), 8);
    }
}
