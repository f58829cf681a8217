use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioSignal;
use crate::error::{Error, Result};

use super::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfccConfig {
    pub sample_rate_hz: u32,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub preemphasis: f64,
    pub num_mel_bins: usize,
    pub num_ceps: usize,
    pub low_freq_hz: f64,
    pub high_freq_hz: f64,
    pub log_floor: f64,
    /// Subtract the per-utterance mean of every coefficient. Off by default.
    pub cepstral_mean_norm: bool,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            sample_rate_hz: 16_000,
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            preemphasis: 0.97,
            num_mel_bins: 40,
            num_ceps: 40,
            low_freq_hz: 20.0,
            high_freq_hz: 7600.0,
            log_floor: 1e-10,
            cepstral_mean_norm: false,
        }
    }
}

impl MfccConfig {
    pub fn window_samples(&self) -> usize {
        (self.sample_rate_hz as f64 * self.frame_length_ms / 1000.0).round() as usize
    }

    pub fn shift_samples(&self) -> usize {
        (self.sample_rate_hz as f64 * self.frame_shift_ms / 1000.0).round() as usize
    }

    /// Frames produced for a signal of `num_samples`; zero if shorter than a window.
    pub fn num_frames(&self, num_samples: usize) -> usize {
        let w = self.window_samples();
        if num_samples < w {
            0
        } else {
            1 + (num_samples - w) / self.shift_samples()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.window_samples() == 0 || self.shift_samples() == 0 {
            return Err(Error::config("frame length and shift must cover at least one sample"));
        }
        if self.num_ceps == 0 || self.num_ceps > self.num_mel_bins {
            return Err(Error::config("num_ceps must be in 1..=num_mel_bins"));
        }
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        if !(0.0 <= self.low_freq_hz && self.low_freq_hz < self.high_freq_hz && self.high_freq_hz <= nyquist) {
            return Err(Error::config("mel range must satisfy 0 <= low < high <= nyquist"));
        }
        Ok(())
    }
}

fn mel(f: f64) -> f64 {
    1127.0 * (1.0 + f / 700.0).ln()
}

/// Triangular filters equally spaced on the mel scale, as `bins x (fft/2+1)`.
pub fn mel_filterbank(cfg: &MfccConfig, fft_size: usize) -> Array2<f64> {
    let n_bins = cfg.num_mel_bins;
    let n_freq = fft_size / 2 + 1;
    let lo = mel(cfg.low_freq_hz);
    let hi = mel(cfg.high_freq_hz);
    let delta = (hi - lo) / (n_bins + 1) as f64;
    let hz_per_bin = cfg.sample_rate_hz as f64 / fft_size as f64;
    Array2::from_shape_fn((n_bins, n_freq), |(b, k)| {
        let left = lo + b as f64 * delta;
        let center = left + delta;
        let right = center + delta;
        let m = mel(k as f64 * hz_per_bin);
        if m > left && m < right {
            if m <= center {
                (m - left) / (center - left)
            } else {
                (right - m) / (right - center)
            }
        } else {
            0.0
        }
    })
}

/// Orthonormal DCT-II matrix, `n x n`, rows indexed by coefficient.
pub fn dct_matrix(n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(k, i)| {
        let norm = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        norm * (PI * k as f64 * (i as f64 + 0.5) / n as f64).cos()
    })
}

/// Precomputed tables for repeated MFCC extraction with one configuration.
pub struct MfccExtractor {
    cfg: MfccConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    fft_size: usize,
    filters: Array2<f64>,
    dct: Array2<f64>,
}

impl MfccExtractor {
    pub fn new(cfg: MfccConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.window_samples();
        let fft_size = n.next_power_of_two();
        // "Povey" window: a Hann window raised to 0.85.
        let window = (0..n)
            .map(|i| (0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1).max(1) as f64).cos()).powf(0.85))
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        let filters = mel_filterbank(&cfg, fft_size);
        let dct = dct_matrix(cfg.num_mel_bins)
            .slice(ndarray::s![..cfg.num_ceps, ..])
            .to_owned();
        Ok(MfccExtractor {
            cfg,
            window,
            fft,
            fft_size,
            filters,
            dct,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    pub fn compute(&self, signal: &AudioSignal) -> Result<FeatureMatrix> {
        let cfg = &self.cfg;
        if signal.sample_rate_hz != cfg.sample_rate_hz {
            return Err(Error::domain(format!(
                "expected {} Hz audio, got {} Hz",
                cfg.sample_rate_hz, signal.sample_rate_hz
            )));
        }
        let t = cfg.num_frames(signal.len());
        if t == 0 {
            return Err(Error::domain(format!(
                "signal of {} samples is shorter than one {} ms window",
                signal.len(),
                cfg.frame_length_ms
            )));
        }
        let win = cfg.window_samples();
        let shift = cfg.shift_samples();
        let n_freq = self.fft_size / 2 + 1;
        let mut frame = vec![0.0; win];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_size];
        let mut power = vec![0.0; n_freq];
        let mut out = Array2::zeros((t, cfg.num_ceps));
        let mut logmel = vec![0.0; cfg.num_mel_bins];

        for f in 0..t {
            frame.copy_from_slice(&signal.samples[f * shift..f * shift + win]);
            for i in (1..win).rev() {
                frame[i] -= cfg.preemphasis * frame[i - 1];
            }
            frame[0] -= cfg.preemphasis * frame[0];
            for (b, (x, w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *b = Complex64::new(x * w, 0.0);
            }
            buf[win..].fill(Complex64::new(0.0, 0.0));
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for (b, lm) in logmel.iter_mut().enumerate() {
                let e: f64 = self.filters.row(b).iter().zip(&power).map(|(w, p)| w * p).sum();
                *lm = e.max(cfg.log_floor).ln();
            }
            for (k, o) in out.row_mut(f).iter_mut().enumerate() {
                *o = self.dct.row(k).iter().zip(&logmel).map(|(d, l)| d * l).sum();
            }
        }
        if cfg.cepstral_mean_norm {
            let mean = out.mean_axis(ndarray::Axis(0)).expect("at least one frame");
            out -= &mean;
        }
        Ok(FeatureMatrix {
            frames: out,
            frame_shift_ms: cfg.frame_shift_ms,
            frame_length_ms: cfg.frame_length_ms,
        })
    }
}

/// One-shot MFCC extraction.
pub fn compute_mfcc(signal: &AudioSignal, cfg: &MfccConfig) -> Result<FeatureMatrix> {
    MfccExtractor::new(cfg.clone())?.compute(signal)
}
