//! Reverberation and additive-noise corpus augmentation.
//!
//! A clean utterance `s` becomes `s * h` (reverb) or
//! `s * h + g * (w * h~)` (reverb plus real noise), where `h` and `h~` are
//! impulse responses of the same room at two positions and `w` is a sum of
//! up to `max_superposed_noises` noise recordings. The noise gain `g` sets the
//! ratio between the two reverberant addends to a drawn SNR.

mod convolve;
mod mix;
mod rooms;

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use convolve::{convolve, convolve_truncated, fft_convolve, Convolved, NORMALIZED_PEAK};
pub use mix::{mix_at_snr, snr_gain, speed_perturb, superpose_noises, Mixed, NoiseDraw};
pub use rooms::{
    load_noise_pool, load_rir_database, write_noise_pool, write_rir_database, NoisePool, NoiseRecording, Rir,
    RoomGroup, SizeClass,
};

use crate::audio::{read_wav, write_wav, AudioSignal};
use crate::error::{Error, Result};
use crate::manifest::{write_jsonl, Manifest, Utterance};

/// Speed factors applied to every training list.
pub const SPEED_FACTORS: [f64; 3] = [0.9, 1.0, 1.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Clean,
    Reverb,
    ReverbRealNoise,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Clean, Condition::Reverb, Condition::ReverbRealNoise];

    pub fn tag(self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::Reverb => "reverb",
            Condition::ReverbRealNoise => "reverb_real_noise",
        }
    }

    /// Id of the copy of `utt_id` produced under this condition.
    pub fn derive_id(self, utt_id: &str) -> String {
        match self {
            Condition::Clean => utt_id.to_string(),
            other => format!("{utt_id}-{}", other.tag()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub condition: Condition,
    pub snr_db_range: [f64; 2],
    pub max_superposed_noises: usize,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            condition: Condition::ReverbRealNoise,
            snr_db_range: [10.0, 20.0],
            max_superposed_noises: 3,
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.snr_db_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::config(format!("bad snr range [{lo}, {hi}]")));
        }
        if self.max_superposed_noises == 0 {
            return Err(Error::config("max_superposed_noises must be positive"));
        }
        Ok(())
    }
}

/// Every random decision made while augmenting one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub utt_id: String,
    pub source_utt_id: String,
    pub condition: Condition,
    pub seed: u64,
    pub room_id: Option<String>,
    pub rir_position: Option<String>,
    pub noise_rir_position: Option<String>,
    pub snr_db: Option<f64>,
    pub noise_gain: Option<f64>,
    pub noises: Vec<NoiseDraw>,
    /// Gain applied to the final mixture by peak normalization.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub utterance: Utterance,
    pub audio: AudioSignal,
    pub provenance: Provenance,
}

/// Seed for one (utterance, condition) pair, independent of processing order.
pub fn derive_seed(global: u64, utt_id: &str, condition: Condition) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(utt_id.as_bytes());
    h.update([0u8]);
    h.update(condition.tag().as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Produces the `spec.condition` copy of one clean utterance.
pub fn augment_utterance(
    utt: &Utterance,
    clean: &AudioSignal,
    spec: &AugmentationSpec,
    rooms: &[RoomGroup],
    pool: &NoisePool,
) -> Result<Augmented> {
    spec.validate()?;
    clean.ensure_non_empty("clean audio")?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut prov = Provenance {
        utt_id: spec.condition.derive_id(&utt.utt_id),
        source_utt_id: utt.utt_id.clone(),
        condition: spec.condition,
        seed: spec.seed,
        room_id: None,
        rir_position: None,
        noise_rir_position: None,
        snr_db: None,
        noise_gain: None,
        noises: Vec::new(),
        scale: 1.0,
    };

    let audio = match spec.condition {
        Condition::Clean => clean.clone(),
        Condition::Reverb => {
            let room = pick_room(rooms, &mut rng)?;
            let h = &room.rirs[rng.random_range(0..room.rirs.len())];
            prov.room_id = Some(room.room_id.clone());
            prov.rir_position = Some(h.position_id.clone());
            let out = convolve(clean, &h.signal)?;
            prov.scale = out.scale;
            out.signal
        }
        Condition::ReverbRealNoise => {
            let room = pick_room(rooms, &mut rng)?;
            let (h, h_noise) = if room.rirs.len() >= 2 {
                let pair = index::sample(&mut rng, room.rirs.len(), 2);
                (&room.rirs[pair.index(0)], &room.rirs[pair.index(1)])
            } else {
                (&room.rirs[0], &room.rirs[0])
            };
            let [lo, hi] = spec.snr_db_range;
            let snr_db = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let count = rng.random_range(1..=spec.max_superposed_noises);
            let (noise, draws) = superpose_noises(pool, count, clean.len(), &mut rng)?;

            let speech_rev = convolve_truncated(clean, &h.signal)?;
            let noise_rev = convolve_truncated(&noise, &h_noise.signal)?;
            let mut mixed = mix_at_snr(&speech_rev, &noise_rev, snr_db)?;
            prov.scale = convolve::peak_normalize(&mut mixed.signal.samples);
            prov.room_id = Some(room.room_id.clone());
            prov.rir_position = Some(h.position_id.clone());
            prov.noise_rir_position = Some(h_noise.position_id.clone());
            prov.snr_db = Some(snr_db);
            prov.noise_gain = Some(mixed.gain);
            prov.noises = draws;
            mixed.signal
        }
    };

    let mut utterance = utt.clone();
    utterance.utt_id = prov.utt_id.clone();
    utterance.condition_tag = spec.condition.tag().to_string();
    Ok(Augmented {
        utterance,
        audio,
        provenance: prov,
    })
}

fn pick_room<'a, R: Rng>(rooms: &'a [RoomGroup], rng: &mut R) -> Result<&'a RoomGroup> {
    if rooms.is_empty() {
        return Err(Error::config("reverberant condition requires at least one room"));
    }
    let room = &rooms[rng.random_range(0..rooms.len())];
    room.validate()?;
    Ok(room)
}

/// Metadata of the three-fold multi-condition manifest, without audio:
/// all clean utterances, then their reverb copies, then their
/// reverb-plus-noise copies. Augmented copies point at `audio/<utt_id>.wav`.
pub fn plan_multicondition(manifest: &Manifest) -> Manifest {
    let mut out = Vec::with_capacity(manifest.len() * 3);
    for cond in Condition::ALL {
        for u in manifest.iter() {
            let mut copy = u.clone();
            copy.utt_id = cond.derive_id(&u.utt_id);
            copy.condition_tag = cond.tag().to_string();
            if cond != Condition::Clean {
                copy.audio_path = format!("audio/{}.wav", copy.utt_id);
            }
            out.push(copy);
        }
    }
    Manifest {
        utterances: out,
        base_dir: None,
    }
}

#[derive(Debug, Clone)]
pub struct Multicondition {
    pub manifest: Manifest,
    pub provenance: Vec<Provenance>,
}

/// Builds the clean + reverb + reverb-plus-noise corpus under `out_dir`
/// (`manifest.jsonl`, `provenance.jsonl`, `audio/`).
///
/// Work is spread over the current rayon pool; every utterance draws from
/// its own seed, so outputs do not depend on the thread count or on the order
/// of the input manifest.
pub fn build_multicondition(
    manifest: &Manifest,
    rooms: &[RoomGroup],
    pool: &NoisePool,
    policy: &AugmentationSpec,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Multicondition> {
    policy.validate()?;
    manifest.validate()?;
    if rooms.is_empty() {
        return Err(Error::config("multi-condition build requires at least one room"));
    }
    let out_dir = out_dir.as_ref();
    let audio_dir = out_dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;

    let per_utt: Vec<Vec<Augmented>> = manifest
        .utterances
        .par_iter()
        .map(|u| {
            let clean = read_wav(manifest.audio_file(u))?;
            [Condition::Reverb, Condition::ReverbRealNoise]
                .into_iter()
                .map(|cond| {
                    let spec = AugmentationSpec {
                        condition: cond,
                        seed: derive_seed(seed, &u.utt_id, cond),
                        ..policy.clone()
                    };
                    let aug = augment_utterance(u, &clean, &spec, rooms, pool)?;
                    write_wav(&aug.audio, audio_dir.join(format!("{}.wav", aug.utterance.utt_id)))?;
                    Ok(aug)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut plan = plan_multicondition(manifest);
    for u in plan.utterances.iter_mut().filter(|u| u.condition_tag == Condition::Clean.tag()) {
        let src = manifest.audio_file(manifest.get(&u.utt_id).expect("planned from manifest"));
        u.audio_path = fs::canonicalize(&src).unwrap_or(src).to_string_lossy().into_owned();
    }
    let provenance: Vec<Provenance> = [0, 1]
        .into_iter()
        .flat_map(|k| per_utt.iter().map(move |v| v[k].provenance.clone()))
        .collect();

    write_jsonl(&out_dir.join("provenance.jsonl"), &provenance)?;
    let plan = plan.with_base_dir(out_dir);
    plan.write_jsonl(out_dir.join("manifest.jsonl"))?;
    Ok(Multicondition {
        manifest: plan,
        provenance,
    })
}

/// Prefix marking a speed-perturbed copy, in the usual `sp<factor>-` form.
pub fn speed_prefix(factor: f64) -> String {
    format!("sp{factor}-")
}

/// Writes speed-perturbed copies (factors other than 1.0) of every utterance
/// under `out_dir/audio` and returns the expanded manifest.
pub fn build_speed_perturbed(manifest: &Manifest, factors: &[f64], out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    let audio_dir = out_dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    let copies: Vec<Vec<Utterance>> = manifest
        .utterances
        .par_iter()
        .map(|u| {
            let src = manifest.audio_file(u);
            let audio = read_wav(&src)?;
            factors
                .iter()
                .map(|&f| {
                    let mut c = u.clone();
                    if f == 1.0 {
                        c.audio_path = fs::canonicalize(&src).unwrap_or_else(|_| src.clone()).to_string_lossy().into_owned();
                        return Ok(c);
                    }
                    let y = speed_perturb(&audio, f)?;
                    c.utt_id = format!("{}{}", speed_prefix(f), u.utt_id);
                    c.audio_path = format!("audio/{}.wav", c.utt_id);
                    c.duration_s = y.duration_s();
                    write_wav(&y, out_dir.join(&c.audio_path))?;
                    Ok(c)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let m = Manifest::new(copies.into_iter().flatten().collect())?.with_base_dir(out_dir);
    m.write_jsonl(out_dir.join("manifest.jsonl"))?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(id: &str) -> Utterance {
        Utterance {
            utt_id: id.into(),
            speaker_id: "spk".into(),
            audio_path: format!("{id}.wav"),
            transcript: vec!["w1".into()],
            condition_tag: "clean".into(),
            duration_s: 2.5,
        }
    }

    #[test]
    fn clean_condition_passes_audio_through() {
        let a = AudioSignal::new(vec![0.1, 0.2], 16000).unwrap();
        let spec = AugmentationSpec {
            condition: Condition::Clean,
            ..Default::default()
        };
        let out = augment_utterance(&utt("u"), &a, &spec, &[], &NoisePool::default()).unwrap();
        assert_eq!(out.audio, a);
        assert_eq!(out.utterance.condition_tag, "clean");
        assert_eq!(out.utterance.utt_id, "u");
    }

    #[test]
    fn reverb_without_rooms_is_config_error() {
        let a = AudioSignal::new(vec![0.1, 0.2], 16000).unwrap();
        let spec = AugmentationSpec {
            condition: Condition::Reverb,
            ..Default::default()
        };
        let err = augment_utterance(&utt("u"), &a, &spec, &[], &NoisePool::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn delta_rir_reverb_is_identity() {
        let a = AudioSignal::new(vec![0.1, -0.2, 0.3], 16000).unwrap();
        let room = RoomGroup::new(
            "r",
            SizeClass::Small,
            vec![Rir {
                position_id: "p".into(),
                signal: AudioSignal::new(vec![1.0], 16000).unwrap(),
            }],
        )
        .unwrap();
        let spec = AugmentationSpec {
            condition: Condition::Reverb,
            ..Default::default()
        };
        let out = augment_utterance(&utt("u"), &a, &spec, &[room], &NoisePool::default()).unwrap();
        assert_eq!(out.utterance.utt_id, "u-reverb");
        for (x, y) in out.audio.samples.iter().zip(&a.samples) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn plan_is_threefold_with_equal_durations() {
        let m = Manifest::new((0..10).map(|i| utt(&format!("u{i}"))).collect()).unwrap();
        let p = plan_multicondition(&m);
        assert_eq!(p.len(), 30);
        for c in Condition::ALL {
            assert_eq!(p.iter().filter(|u| u.condition_tag == c.tag()).count(), 10);
        }
        assert!((p.total_duration_s() - 3.0 * m.total_duration_s()).abs() < 1e-9);
        p.validate().unwrap();
    }

    #[test]
    fn derived_seeds_differ_by_condition_and_id() {
        let a = derive_seed(1, "u1", Condition::Reverb);
        assert_eq!(a, derive_seed(1, "u1", Condition::Reverb));
        assert_ne!(a, derive_seed(1, "u1", Condition::ReverbRealNoise));
        assert_ne!(a, derive_seed(1, "u2", Condition::Reverb));
        assert_ne!(a, derive_seed(2, "u1", Condition::Reverb));
    }
}
