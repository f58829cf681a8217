//! FFT overlap-add convolution.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio::AudioSignal;
use crate::error::{Error, Result};

/// Peak level that over-range convolution outputs are scaled down to.
pub const NORMALIZED_PEAK: f64 = 0.99;

/// Result of [`convolve`]: the signal and the gain applied to it (1.0 when
/// no peak normalization was needed).
#[derive(Debug, Clone, PartialEq)]
pub struct Convolved {
    pub signal: AudioSignal,
    pub scale: f64,
}

/// Full linear convolution of `x` and `h` (length `len(x) + len(h) - 1`)
/// computed block-wise with overlap-add.
pub fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let m = h.len();
    let out_len = x.len() + m - 1;
    let fft_size = (m + x.len().min(m.max(2048)) - 1).next_power_of_two().max(16);
    let block = fft_size - m + 1;

    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(fft_size);
    let inv = planner.plan_fft_inverse(fft_size);

    let mut kernel: Vec<Complex64> = h.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    kernel.resize(fft_size, Complex64::new(0.0, 0.0));
    fwd.process(&mut kernel);

    let norm = 1.0 / fft_size as f64;
    let mut out = vec![0.0; out_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
    for (b, chunk) in x.chunks(block).enumerate() {
        for (dst, &v) in buf.iter_mut().zip(chunk) {
            *dst = Complex64::new(v, 0.0);
        }
        buf[chunk.len()..].fill(Complex64::new(0.0, 0.0));
        fwd.process(&mut buf);
        for (a, k) in buf.iter_mut().zip(&kernel) {
            *a *= k;
        }
        inv.process(&mut buf);
        let offset = b * block;
        let valid = (chunk.len() + m - 1).min(out_len - offset);
        for (o, v) in out[offset..offset + valid].iter_mut().zip(&buf) {
            *o += v.re * norm;
        }
    }
    out
}

/// `signal * rir` truncated to the length of `signal`, without any gain
/// adjustment.
pub fn convolve_truncated(signal: &AudioSignal, rir: &AudioSignal) -> Result<AudioSignal> {
    if signal.sample_rate_hz != rir.sample_rate_hz {
        return Err(Error::domain(format!(
            "sample-rate mismatch: signal {} Hz, rir {} Hz",
            signal.sample_rate_hz, rir.sample_rate_hz
        )));
    }
    signal.ensure_non_empty("signal")?;
    rir.ensure_non_empty("impulse response")?;
    let mut y = fft_convolve(&signal.samples, &rir.samples);
    y.truncate(signal.len());
    Ok(AudioSignal {
        samples: y,
        sample_rate_hz: signal.sample_rate_hz,
    })
}

/// Reverberates `signal` with `rir`. The output keeps the input length and
/// is scaled to a peak of [`NORMALIZED_PEAK`] only if it would exceed 1.
pub fn convolve(signal: &AudioSignal, rir: &AudioSignal) -> Result<Convolved> {
    let mut y = convolve_truncated(signal, rir)?;
    let scale = peak_normalize(&mut y.samples);
    Ok(Convolved { signal: y, scale })
}

/// Scales `x` in place so that its peak is [`NORMALIZED_PEAK`] when the peak
/// exceeds 1; returns the applied gain.
pub(crate) fn peak_normalize(x: &mut [f64]) -> f64 {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        let scale = NORMALIZED_PEAK / peak;
        x.iter_mut().for_each(|v| *v *= scale);
        scale
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(x: &[f64]) -> AudioSignal {
        AudioSignal::new(x.to_vec(), 16000).unwrap()
    }

    #[test]
    fn unit_impulse_is_identity() {
        let s = sig(&[0.1, -0.2, 0.3, 0.05]);
        let out = convolve(&s, &sig(&[1.0])).unwrap();
        assert_eq!(out.scale, 1.0);
        for (a, b) in out.signal.samples.iter().zip(&s.samples) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn small_known_case() {
        let full = fft_convolve(&[1.0, 2.0, 3.0], &[1.0, 1.0]);
        let expect = [1.0, 3.0, 5.0, 3.0];
        assert_eq!(full.len(), 4);
        for (a, b) in full.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let s = AudioSignal {
            samples: vec![1.0, 2.0, 3.0],
            sample_rate_hz: 16000,
        };
        let t = convolve_truncated(&s, &sig(&[1.0, 1.0])).unwrap();
        assert_eq!(t.len(), 3);
        // over-range output gets normalized to 0.99 peak
        let n = convolve(&s, &sig(&[1.0, 1.0])).unwrap();
        assert!((n.scale - 0.99 / 5.0).abs() < 1e-12);
        assert!((n.signal.peak() - 0.99).abs() < 1e-12);
    }

    #[test]
    fn rate_mismatch_is_domain_error() {
        let a = sig(&[0.1]);
        let b = AudioSignal::new(vec![1.0], 8000).unwrap();
        assert!(matches!(convolve(&a, &b), Err(Error::Domain(_))));
    }
}
