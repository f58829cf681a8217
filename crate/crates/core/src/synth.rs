//! Synthetic corpora for desk-scale runs.
//!
//! Each "phone" class `k >= 1` is a harmonic tone whose spectral envelope has
//! two formant peaks picked from a log-spaced grid; class 0 is low-level
//! noise standing in for silence. A word is a single phone, so a transcript
//! is the sequence of its classes. Speakers differ by pitch, a formant warp
//! factor and spectral tilt.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{write_alignments, Alignment, Segment, SILENCE_CLASS};
use crate::audio::{write_wav, AudioSignal, CORPUS_RATE_HZ};
use crate::augment::{
    augment_utterance, convolve_truncated, derive_seed, write_noise_pool, write_rir_database, AugmentationSpec, Condition, NoisePool,
    NoiseRecording, Rir, RoomGroup, SizeClass,
};
use crate::error::{Error, Result};
use crate::evaluation::SymbolTable;
use crate::manifest::{Manifest, Utterance};

const F1_GRID: (f64, f64, usize) = (260.0, 900.0, 5);
const F2_GRID: (f64, f64, usize) = (950.0, 2900.0, 8);
const SILENCE_LEVEL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub num_speakers: usize,
    pub utts_per_speaker: usize,
    /// Output classes including silence.
    pub phone_classes: usize,
    pub words_per_utt: [usize; 2],
    pub seed: u64,
    /// Prefix of speaker ids, so independent corpora do not collide.
    pub speaker_prefix: String,
    /// Range of the per-speaker formant warp factor.
    pub warp_range: [f64; 2],
}

impl SynthConfig {
    pub fn new(num_speakers: usize, utts_per_speaker: usize, phone_classes: usize, seed: u64) -> Self {
        SynthConfig {
            num_speakers,
            utts_per_speaker,
            phone_classes,
            words_per_utt: [3, 6],
            seed,
            speaker_prefix: "spk".into(),
            warp_range: [0.94, 1.06],
        }
    }

    fn validate(&self) -> Result<()> {
        let max = F1_GRID.2 * F2_GRID.2 + 1;
        if self.phone_classes < 2 || self.phone_classes > max {
            return Err(Error::config(format!("phone_classes must be in 2..={max}")));
        }
        if self.num_speakers == 0 || self.utts_per_speaker == 0 {
            return Err(Error::config("need at least one speaker and one utterance"));
        }
        let [lo, hi] = self.words_per_utt;
        if lo == 0 || lo > hi {
            return Err(Error::config("words_per_utt must be a non-empty positive range"));
        }
        let [a, b] = self.warp_range;
        if !(a > 0.0 && a <= b) {
            return Err(Error::config("bad warp range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Voice {
    f0: f64,
    warp: f64,
    /// dB per octave above 500 Hz.
    tilt_db: f64,
}

/// Formant pair of class `k >= 1`.
fn formants(k: usize) -> (f64, f64) {
    let grid = |(lo, hi, n): (f64, f64, usize), i: usize| lo * (hi / lo).powf(i as f64 / (n - 1) as f64);
    let idx = k - 1;
    // interleave so neighbouring ids differ in both formants
    let i1 = idx % F1_GRID.2;
    let i2 = (idx / F1_GRID.2 + 3 * i1) % F2_GRID.2;
    (grid(F1_GRID, i1), grid(F2_GRID, i2))
}

fn envelope(f: f64, f1: f64, f2: f64, voice: &Voice) -> f64 {
    let peak = |c: f64, bw: f64| (-(f - c).powi(2) / (2.0 * bw * bw)).exp();
    let tilt = if f > 500.0 { 10f64.powf(voice.tilt_db * (f / 500.0).log2() / 20.0) } else { 1.0 };
    (peak(f1, 90.0) + 0.7 * peak(f2, 140.0) + 0.02) * tilt
}

fn render_phone<R: Rng>(class: usize, len: usize, voice: &Voice, rng: &mut R, out: &mut [f64]) {
    let (f1, f2) = formants(class);
    let jitter = |rng: &mut R| 1.0 + rng.random_range(-0.03..0.03);
    let (f1, f2) = (f1 * voice.warp * jitter(rng), f2 * voice.warp * jitter(rng));
    let f0 = voice.f0 * jitter(rng);
    let sr = CORPUS_RATE_HZ as f64;
    let partials: Vec<(f64, f64, f64)> = (1..)
        .map(|h| h as f64 * f0)
        .take_while(|&f| f < 7000.0)
        .map(|f| (f, envelope(f, f1, f2, voice), rng.random_range(0.0..2.0 * PI)))
        .collect();
    let norm: f64 = partials.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt();
    let ramp = (0.01 * sr) as usize;
    for (n, y) in out.iter_mut().enumerate().take(len) {
        let t = n as f64 / sr;
        let mut v = 0.0;
        for &(f, a, ph) in &partials {
            v += a * (2.0 * PI * f * t + ph).sin();
        }
        let edge = n.min(len - 1 - n);
        let g = if edge < ramp { 0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos() } else { 1.0 };
        *y += 0.2 * g * v / norm;
    }
}

/// One synthetic utterance: audio and its exact segmentation.
fn render_utterance<R: Rng>(
    utt_id: &str,
    words: &[usize],
    voice: &Voice,
    rng: &mut R,
) -> (AudioSignal, Alignment) {
    let sr = CORPUS_RATE_HZ as f64;
    let ms = |rng: &mut R, lo: f64, hi: f64| (rng.random_range(lo..hi) * sr / 1000.0) as usize;
    let mut plan: Vec<(usize, usize)> = vec![(SILENCE_CLASS, ms(rng, 120.0, 220.0))];
    for (i, &w) in words.iter().enumerate() {
        plan.push((w, ms(rng, 130.0, 260.0)));
        let gap = if i + 1 == words.len() { ms(rng, 120.0, 220.0) } else { ms(rng, 60.0, 150.0) };
        plan.push((SILENCE_CLASS, gap));
    }
    let total: usize = plan.iter().map(|p| p.1).sum();
    let mut samples: Vec<f64> = (0..total).map(|_| SILENCE_LEVEL * rng.random_range(-1.0..1.0)).collect();
    let mut segments = Vec::with_capacity(plan.len());
    let mut pos = 0;
    for (class, len) in plan {
        if class != SILENCE_CLASS {
            render_phone(class, len, voice, rng, &mut samples[pos..pos + len]);
        }
        segments.push(Segment {
            class,
            start: pos,
            end: pos + len,
        });
        pos += len;
    }
    (
        AudioSignal::new(samples, CORPUS_RATE_HZ).expect("finite samples"),
        Alignment {
            utt_id: utt_id.to_string(),
            num_samples: total,
            segments,
        },
    )
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub manifest: Manifest,
    pub audio: Vec<AudioSignal>,
    pub alignments: Vec<Alignment>,
    pub symbols: SymbolTable,
}

impl SynthCorpus {
    /// Writes `manifest.jsonl`, `alignments.jsonl`, `symbols.json` and
    /// `audio/*.wav` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Manifest> {
        let audio_dir = dir.join("audio");
        fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
        for (u, a) in self.manifest.utterances.iter().zip(&self.audio) {
            write_wav(a, dir.join(&u.audio_path))?;
        }
        self.manifest.write_jsonl(dir.join("manifest.jsonl"))?;
        write_alignments(&dir.join("alignments.jsonl"), &self.alignments)?;
        self.symbols.write(&dir.join("symbols.json"))?;
        Ok(self.manifest.clone().with_base_dir(dir))
    }

    pub fn alignment_map(&self) -> BTreeMap<String, Alignment> {
        self.alignments.iter().map(|a| (a.utt_id.clone(), a.clone())).collect()
    }
}

/// Generates `num_speakers * utts_per_speaker` utterances, deterministically
/// from `config.seed`.
pub fn synth_corpus(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let symbols = SymbolTable::synthetic(config.phone_classes);
    let mut utterances = Vec::new();
    let mut audio = Vec::new();
    let mut alignments = Vec::new();
    for s in 0..config.num_speakers {
        let speaker_id = format!("{}{s:03}", config.speaker_prefix);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &speaker_id, Condition::Clean));
        let [wlo, whi] = config.warp_range;
        let voice = Voice {
            f0: rng.random_range(95.0..230.0),
            warp: if whi > wlo { rng.random_range(wlo..whi) } else { wlo },
            tilt_db: rng.random_range(-9.0..-3.0),
        };
        for u in 0..config.utts_per_speaker {
            let utt_id = format!("{speaker_id}-u{u:03}");
            let n_words = rng.random_range(config.words_per_utt[0]..=config.words_per_utt[1]);
            let words: Vec<usize> = (0..n_words).map(|_| rng.random_range(1..config.phone_classes)).collect();
            let (sig, ali) = render_utterance(&utt_id, &words, &voice, &mut rng);
            utterances.push(Utterance {
                utt_id: utt_id.clone(),
                speaker_id: speaker_id.clone(),
                audio_path: format!("audio/{utt_id}.wav"),
                transcript: words.iter().map(|&w| symbols.word(w).to_string()).collect(),
                condition_tag: Condition::Clean.tag().into(),
                duration_s: sig.duration_s(),
            });
            audio.push(sig);
            alignments.push(ali);
        }
    }
    Ok(SynthCorpus {
        manifest: Manifest::new(utterances)?,
        audio,
        alignments,
        symbols,
    })
}

/// Exponentially decaying noise tail behind a direct-path impulse.
fn synth_rir<R: Rng>(rt60_s: f64, rng: &mut R) -> AudioSignal {
    let sr = CORPUS_RATE_HZ as f64;
    let delay = rng.random_range(16..80);
    let len = delay + (rt60_s * sr) as usize;
    let decay = 6.9078 / (rt60_s * sr);
    let tail_gain = rng.random_range(0.25..0.5);
    let mut h = vec![0.0; len];
    h[delay] = 1.0;
    let mut lp = 0.0;
    for (n, v) in h.iter_mut().enumerate().skip(delay + 1) {
        // light low-pass so the tail darkens like real rooms
        lp = 0.6 * lp + 0.4 * rng.random_range(-1.0..1.0);
        *v += tail_gain * lp * (-decay * (n - delay) as f64).exp();
    }
    AudioSignal::new(h, CORPUS_RATE_HZ).expect("finite")
}

/// `num_rooms` rooms with `positions` impulse responses each. Small rooms
/// get RT60 in 0.15-0.4 s, medium rooms 0.4-0.8 s.
pub fn synth_rooms(num_rooms: usize, positions: usize, seed: u64, prefix: &str) -> Result<Vec<RoomGroup>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_rooms)
        .map(|r| {
            let size_class = if r % 2 == 0 { SizeClass::Small } else { SizeClass::Medium };
            let rt60 = match size_class {
                SizeClass::Small => rng.random_range(0.15..0.4),
                SizeClass::Medium => rng.random_range(0.4..0.8),
            };
            let rirs = (0..positions)
                .map(|p| Rir {
                    position_id: format!("pos{p}"),
                    signal: synth_rir(rt60, &mut rng),
                })
                .collect();
            RoomGroup::new(format!("{prefix}room{r:02}"), size_class, rirs)
        })
        .collect()
}

/// Background noises: coloured noise, mains hum, and a babble-like mix of
/// gliding tones. Each recording lasts `seconds`.
pub fn synth_noise_pool(count: usize, seconds: f64, seed: u64, prefix: &str) -> NoisePool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = CORPUS_RATE_HZ as f64;
    let len = (seconds * sr) as usize;
    let recordings = (0..count)
        .map(|i| {
            let samples: Vec<f64> = match i % 3 {
                0 => {
                    let a = rng.random_range(0.5..0.95);
                    let mut y = 0.0;
                    (0..len)
                        .map(|_| {
                            y = a * y + (1.0 - a) * rng.random_range(-1.0..1.0);
                            y
                        })
                        .collect()
                }
                1 => {
                    let base = if rng.random::<bool>() { 50.0 } else { 60.0 };
                    let phases: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
                    (0..len)
                        .map(|n| {
                            let t = n as f64 / sr;
                            let hum: f64 = (1..=6).map(|h| (2.0 * PI * base * h as f64 * t + phases[h - 1]).sin() / h as f64).sum();
                            hum + 0.2 * rng.random_range(-1.0..1.0)
                        })
                        .collect()
                }
                _ => {
                    let voices: Vec<(f64, f64, f64)> = (0..8)
                        .map(|_| (rng.random_range(150.0..1500.0), rng.random_range(0.5..4.0), rng.random_range(0.0..2.0 * PI)))
                        .collect();
                    (0..len)
                        .map(|n| {
                            let t = n as f64 / sr;
                            voices
                                .iter()
                                .map(|&(f, m, ph)| (2.0 * PI * f * (1.0 + 0.05 * (2.0 * PI * m * t).sin()) * t + ph).sin() * (0.5 + 0.5 * (2.0 * PI * m * t + ph).sin()))
                                .sum::<f64>()
                        })
                        .collect()
                }
            };
            let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
            NoiseRecording {
                id: format!("{prefix}noise{i:02}"),
                signal: AudioSignal::new(samples.iter().map(|v| 0.5 * v / peak).collect(), CORPUS_RATE_HZ).expect("finite"),
            }
        })
        .collect();
    NoisePool { recordings }
}

/// Shape of the source/target mismatch task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub source_speakers: usize,
    pub source_utts_per_speaker: usize,
    pub target_speakers: usize,
    pub target_utts_per_speaker: usize,
    pub phone_classes: usize,
    /// SNR range of the corrupted target side.
    pub target_snr_db: [f64; 2],
    /// Pass band of the recording channel shared by all target speakers.
    #[serde(default)]
    pub target_channel_hz: Option<[f64; 2]>,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            source_speakers: 8,
            source_utts_per_speaker: 12,
            target_speakers: 4,
            target_utts_per_speaker: 16,
            phone_classes: 12,
            target_snr_db: [5.0, 15.0],
            target_channel_hz: Some([300.0, 3400.0]),
            seed: 1,
        }
    }
}

/// Linear-phase band-pass FIR (Hann-windowed sinc difference) with `taps`
/// coefficients.
pub fn band_pass(band_hz: [f64; 2], taps: usize) -> Result<AudioSignal> {
    let sr = CORPUS_RATE_HZ as f64;
    let [lo, hi] = band_hz;
    if !(0.0 <= lo && lo < hi && hi < sr / 2.0) || taps < 3 {
        return Err(Error::config(format!("bad band [{lo}, {hi}] Hz or tap count {taps}")));
    }
    let mid = (taps - 1) as f64 / 2.0;
    let lowpass = |fc: f64, m: f64| {
        let w = 2.0 * fc / sr;
        if m == 0.0 {
            w
        } else {
            (PI * w * m).sin() / (PI * m)
        }
    };
    let h = (0..taps)
        .map(|n| {
            let m = n as f64 - mid;
            let win = 0.5 - 0.5 * (2.0 * PI * n as f64 / (taps - 1) as f64).cos();
            (lowpass(hi, m) - lowpass(lo, m)) * win
        })
        .collect();
    AudioSignal::new(h, CORPUS_RATE_HZ)
}

/// `signal` through `channel`, rescaled to its original RMS.
fn apply_channel(signal: &AudioSignal, channel: &AudioSignal) -> Result<AudioSignal> {
    let rms = |x: &[f64]| (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    let mut y = convolve_truncated(signal, channel)?;
    let (a, b) = (rms(&signal.samples), rms(&y.samples));
    if b > 0.0 {
        y.samples.iter_mut().for_each(|v| *v *= a / b);
    }
    Ok(y)
}

/// Clean source corpus, target corpus (band-limited recording channel, then
/// reverberation and noise), and the augmentation material for the source
/// side. Rooms and noises used to corrupt the target are generated
/// separately and never offered to augmentation.
#[derive(Debug, Clone)]
pub struct MismatchBenchmark {
    pub source: SynthCorpus,
    pub target: SynthCorpus,
    pub rooms: Vec<RoomGroup>,
    pub noises: NoisePool,
}

/// Directory layout written by [`MismatchBenchmark::write`].
#[derive(Debug, Clone)]
pub struct BenchmarkPaths {
    pub source_manifest: PathBuf,
    pub source_alignments: PathBuf,
    pub target_manifest: PathBuf,
    pub target_alignments: PathBuf,
    pub rir_dir: PathBuf,
    pub noise_dir: PathBuf,
    pub symbols: PathBuf,
}

impl MismatchBenchmark {
    pub fn generate(cfg: &BenchmarkConfig) -> Result<Self> {
        let seed = |tag: &str| derive_seed(cfg.seed, tag, Condition::Clean);
        let source = synth_corpus(&SynthConfig {
            speaker_prefix: "src".into(),
            ..SynthConfig::new(cfg.source_speakers, cfg.source_utts_per_speaker, cfg.phone_classes, seed("source"))
        })?;
        let mut target = synth_corpus(&SynthConfig {
            speaker_prefix: "tgt".into(),
            warp_range: [0.9, 1.1],
            ..SynthConfig::new(cfg.target_speakers, cfg.target_utts_per_speaker, cfg.phone_classes, seed("target"))
        })?;

        let rooms = synth_rooms(6, 3, seed("aug-rooms"), "aug-")?;
        let noises = synth_noise_pool(6, 3.0, seed("aug-noise"), "aug-");
        let held_rooms = synth_rooms(4, 3, seed("held-rooms"), "held-")?;
        let held_noises = synth_noise_pool(3, 3.0, seed("held-noise"), "held-");

        let spec = AugmentationSpec {
            condition: Condition::ReverbRealNoise,
            snr_db_range: cfg.target_snr_db,
            max_superposed_noises: 2,
            seed: 0,
        };
        let channel = cfg.target_channel_hz.map(|band| band_pass(band, 129)).transpose()?;
        for (u, audio) in target.manifest.utterances.iter_mut().zip(target.audio.iter_mut()) {
            if let Some(h) = &channel {
                *audio = apply_channel(audio, h)?;
            }
            let spec = AugmentationSpec {
                seed: derive_seed(cfg.seed, &u.utt_id, Condition::ReverbRealNoise),
                ..spec.clone()
            };
            let aug = augment_utterance(u, audio, &spec, &held_rooms, &held_noises)?;
            *audio = aug.audio;
            u.condition_tag = "target".into();
        }
        Ok(MismatchBenchmark {
            source,
            target,
            rooms,
            noises,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<BenchmarkPaths> {
        self.source.write(&dir.join("source"))?;
        self.target.write(&dir.join("target"))?;
        write_rir_database(&self.rooms, dir.join("rirs"))?;
        write_noise_pool(&self.noises, dir.join("noises"))?;
        Ok(BenchmarkPaths {
            source_manifest: dir.join("source/manifest.jsonl"),
            source_alignments: dir.join("source/alignments.jsonl"),
            target_manifest: dir.join("target/manifest.jsonl"),
            target_alignments: dir.join("target/alignments.jsonl"),
            rir_dir: dir.join("rirs"),
            noise_dir: dir.join("noises"),
            symbols: dir.join("source/symbols.json"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::MfccConfig;

    #[test]
    fn band_pass_response() {
        let h = band_pass([300.0, 3400.0], 129).unwrap();
        let gain = |f: f64| {
            let w = 2.0 * PI * f / CORPUS_RATE_HZ as f64;
            let (re, im) = h.samples.iter().enumerate().fold((0.0, 0.0), |(r, i), (n, &c)| {
                (r + c * (w * n as f64).cos(), i - c * (w * n as f64).sin())
            });
            (re * re + im * im).sqrt()
        };
        assert!((gain(1500.0) - 1.0).abs() < 0.01);
        assert!(gain(50.0) < 0.05 && gain(6000.0) < 0.01);
        assert!(band_pass([3400.0, 300.0], 129).is_err());
    }

    #[test]
    fn formants_distinct() {
        let mut seen = std::collections::HashSet::new();
        for k in 1..=40 {
            let (a, b) = formants(k);
            assert!(a < b);
            assert!(seen.insert(((a * 10.0) as i64, (b * 10.0) as i64)), "class {k} repeats");
        }
    }

    #[test]
    fn deterministic_and_consistent() {
        let cfg = SynthConfig::new(2, 3, 10, 42);
        let a = synth_corpus(&cfg).unwrap();
        let b = synth_corpus(&cfg).unwrap();
        assert_eq!(a.audio, b.audio);
        assert_eq!(a.manifest, b.manifest);
        assert_eq!(a.manifest.len(), 6);
        let mfcc = MfccConfig::default();
        for ((u, sig), ali) in a.manifest.iter().zip(&a.audio).zip(&a.alignments) {
            ali.validate().unwrap();
            assert_eq!(ali.num_samples, sig.len());
            assert_eq!(ali.frame_targets(&mfcc).len(), mfcc.num_frames(sig.len()));
            let words: Vec<String> = ali.class_sequence().iter().map(|&c| a.symbols.word(c).to_string()).collect();
            assert_eq!(words, u.transcript);
            assert!(sig.peak() <= 1.0);
        }
    }

    #[test]
    fn rooms_decay() {
        let rooms = synth_rooms(2, 3, 5, "t-").unwrap();
        assert_eq!(rooms[0].size_class, SizeClass::Small);
        for r in &rooms {
            assert_eq!(r.rirs.len(), 3);
            for h in &r.rirs {
                let x = &h.signal.samples;
                let q = x.len() / 4;
                let e = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>();
                assert!(e(&x[..q]) > 10.0 * e(&x[3 * q..]));
            }
        }
        let pool = synth_noise_pool(3, 0.5, 1, "n-");
        assert_eq!(pool.recordings.len(), 3);
        assert!(pool.recordings.iter().all(|r| r.signal.peak() > 0.49 && r.signal.peak() <= 0.5));
    }
}
