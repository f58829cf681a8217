//! Mono audio container, WAV I/O, band-limited resampling and power.
//!
//! Samples are held as `f64` regardless of the on-disk encoding. Files are
//! written as 16-bit PCM mono; reading accepts 16-bit PCM or 32-bit float
//! with any channel count and keeps channel 0.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};

/// Canonical corpus sample rate.
pub const CORPUS_RATE_HZ: u32 = 16_000;

/// Half-width of the resampling kernel, in zero crossings of the low-pass sinc.
pub const SINC_HALF_WIDTH: usize = 32;

/// Low-pass cutoff as a fraction of the lower of the two Nyquist rates.
const SINC_ROLLOFF: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::domain("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::domain(format!("sample {i} is not finite")));
        }
        Ok(AudioSignal {
            samples,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Fails unless the signal is usable as input to a DSP operation.
    pub(crate) fn ensure_non_empty(&self, what: &str) -> Result<()> {
        if self.samples.is_empty() {
            Err(Error::domain(format!("{what} is empty")))
        } else {
            Ok(())
        }
    }
}

/// Outcome of [`write_wav`]: how many samples had to be hard-clipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WriteReport {
    pub clipped: usize,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioSignal> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(Error::Format {
            path: path.into(),
            reason: "zero channels".into(),
        });
    }
    let channels = spec.channels as usize;
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .step_by(channels)
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .step_by(channels)
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedCodec {
                path: path.into(),
                reason: format!("{bits}-bit {fmt:?} samples"),
            })
        }
    };
    AudioSignal::new(samples, spec.sample_rate).map_err(|e| Error::Format {
        path: path.into(),
        reason: e.to_string(),
    })
}

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Error::Format {
            path: path.into(),
            reason: "truncated file".into(),
        },
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::FormatError(reason) => Error::Format {
            path: path.into(),
            reason: reason.into(),
        },
        hound::Error::TooWide | hound::Error::Unsupported | hound::Error::InvalidSampleFormat => {
            Error::UnsupportedCodec {
                path: path.into(),
                reason: err.to_string(),
            }
        }
        other => Error::Format {
            path: path.into(),
            reason: other.to_string(),
        },
    }
}

/// Quantizes one sample to 16-bit PCM; the flag is set when the input lay
/// outside `[-1, 1]` and was clipped.
pub fn quantize_pcm16(x: f64) -> (i16, bool) {
    let clipped = !(-1.0..=1.0).contains(&x);
    let q = (x * 32768.0).round().clamp(-32768.0, 32767.0);
    (q as i16, clipped)
}

pub fn write_wav(signal: &AudioSignal, path: impl AsRef<Path>) -> Result<WriteReport> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    let mut report = WriteReport::default();
    for &x in &signal.samples {
        let (q, clipped) = quantize_pcm16(x);
        report.clipped += clipped as usize;
        writer.write_sample(q).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))?;
    if report.clipped > 0 {
        log::warn!("{}: clipped {} samples", path.display(), report.clipped);
    }
    Ok(report)
}

/// Windowed-sinc resampling to `target_rate_hz`.
///
/// Output length is `round(len * target / source)`.
pub fn resample(signal: &AudioSignal, target_rate_hz: u32) -> Result<AudioSignal> {
    if target_rate_hz == 0 {
        return Err(Error::domain("target sample rate must be positive"));
    }
    if target_rate_hz == signal.sample_rate_hz {
        return Ok(signal.clone());
    }
    let ratio = target_rate_hz as f64 / signal.sample_rate_hz as f64;
    Ok(AudioSignal {
        samples: resample_by_ratio(&signal.samples, ratio),
        sample_rate_hz: target_rate_hz,
    })
}

/// Resamples by an arbitrary positive `ratio` (output rate over input rate).
pub(crate) fn resample_by_ratio(input: &[f64], ratio: f64) -> Vec<f64> {
    let out_len = (input.len() as f64 * ratio).round() as usize;
    let cutoff = SINC_ROLLOFF * ratio.min(1.0);
    let half_width = SINC_HALF_WIDTH as f64 / cutoff;
    let n = input.len() as isize;
    let dot = |base: isize, first: isize, taps: &[f64]| {
        let mut acc = 0.0;
        for (k, w) in taps.iter().enumerate() {
            let i = base + first + k as isize;
            if (0..n).contains(&i) {
                acc += input[i as usize] * w;
            }
        }
        acc
    };
    // Output positions j / ratio; when 1 / ratio is a small fraction p / q the
    // fractional offsets repeat every q samples and the taps can be tabulated.
    if let Some((p, q)) = small_fraction(1.0 / ratio) {
        let table: Vec<(isize, Vec<f64>)> = (0..q)
            .map(|r| {
                let frac = r as f64 / q as f64;
                let first = (frac - half_width).ceil() as isize;
                let last = (frac + half_width).floor() as isize;
                let taps = (first..=last).map(|i| sinc_kernel(frac - i as f64, cutoff, half_width)).collect();
                (first, taps)
            })
            .collect();
        return (0..out_len as u64)
            .map(|j| {
                let (base, r) = ((j * p / q) as isize, (j * p % q) as usize);
                let (first, taps) = &table[r];
                dot(base, *first, taps)
            })
            .collect();
    }
    (0..out_len)
        .map(|j| {
            let pos = j as f64 / ratio;
            let lo = ((pos - half_width).ceil() as isize).max(0);
            let hi = ((pos + half_width).floor() as isize).min(n - 1);
            let mut acc = 0.0;
            for i in lo..=hi {
                let x = pos - i as f64;
                acc += input[i as usize] * sinc_kernel(x, cutoff, half_width);
            }
            acc
        })
        .collect()
}

/// `x = p / q` exactly (to 1e-12) with `q <= 1000`.
fn small_fraction(x: f64) -> Option<(u64, u64)> {
    (1..=1000u64).find_map(|q| {
        let p = (x * q as f64).round();
        ((p / q as f64 - x).abs() < 1e-12 && p > 0.0).then_some((p as u64, q))
    })
}

fn sinc_kernel(x: f64, cutoff: f64, half_width: f64) -> f64 {
    let u = x / half_width;
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let arg = PI * cutoff * x;
    let sinc = if arg.abs() < 1e-12 { 1.0 } else { arg.sin() / arg };
    let window = 0.42 + 0.5 * (PI * u).cos() + 0.08 * (2.0 * PI * u).cos();
    cutoff * sinc * window
}

/// Mean square of the samples.
pub fn signal_power(signal: &AudioSignal) -> Result<f64> {
    signal.ensure_non_empty("signal")?;
    Ok(mean_square(&signal.samples))
}

pub(crate) fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}
