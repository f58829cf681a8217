use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{mean_square, resample_by_ratio, AudioSignal};
use crate::error::{Error, Result};

use super::rooms::NoisePool;

/// Speech plus scaled noise, with the gain that was applied to the noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixed {
    pub signal: AudioSignal,
    pub gain: f64,
}

/// Noise gain that puts `noise_power` at `snr_db` below `speech_power`.
pub fn snr_gain(speech_power: f64, noise_power: f64, snr_db: f64) -> f64 {
    (speech_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Adds `noise[..len(speech)]` to `speech`, scaled so the two addends have a
/// mean-square power ratio of `snr_db`.
pub fn mix_at_snr(speech: &AudioSignal, noise: &AudioSignal, snr_db: f64) -> Result<Mixed> {
    if speech.sample_rate_hz != noise.sample_rate_hz {
        return Err(Error::domain("speech and noise sample rates differ"));
    }
    speech.ensure_non_empty("speech")?;
    if noise.len() < speech.len() {
        return Err(Error::domain(format!(
            "noise has {} samples, speech needs {}",
            noise.len(),
            speech.len()
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::domain("snr_db must be finite"));
    }
    let noise = &noise.samples[..speech.len()];
    let ps = mean_square(&speech.samples);
    let pn = mean_square(noise);
    if ps <= 0.0 {
        return Err(Error::Degenerate("speech has zero power".into()));
    }
    if pn <= 0.0 {
        return Err(Error::Degenerate("noise has zero power".into()));
    }
    let gain = snr_gain(ps, pn, snr_db);
    let samples = speech
        .samples
        .iter()
        .zip(noise)
        .map(|(s, n)| s + gain * n)
        .collect();
    Ok(Mixed {
        signal: AudioSignal {
            samples,
            sample_rate_hz: speech.sample_rate_hz,
        },
        gain,
    })
}

/// Which recording contributed to a noise superposition, and where it was cut.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseDraw {
    pub noise_id: String,
    pub offset: usize,
}

/// Sums `count` distinct recordings from `pool` (all of them if the pool is
/// smaller), each cut or looped to `target_len` from a random offset.
pub fn superpose_noises<R: Rng + ?Sized>(
    pool: &NoisePool,
    count: usize,
    target_len: usize,
    rng: &mut R,
) -> Result<(AudioSignal, Vec<NoiseDraw>)> {
    if pool.recordings.is_empty() {
        return Err(Error::config("noise pool is empty"));
    }
    if count == 0 {
        return Err(Error::domain("noise count must be at least 1"));
    }
    let rate = pool.recordings[0].signal.sample_rate_hz;
    let take = count.min(pool.recordings.len());
    let picks = index::sample(rng, pool.recordings.len(), take).into_vec();

    let mut out = vec![0.0; target_len];
    let mut draws = Vec::with_capacity(take);
    for i in picks {
        let rec = &pool.recordings[i];
        let src = &rec.signal.samples;
        if src.is_empty() {
            return Err(Error::data(format!("noise {} is empty", rec.id)));
        }
        if rec.signal.sample_rate_hz != rate {
            return Err(Error::config("noise pool has mixed sample rates"));
        }
        let offset = if src.len() >= target_len {
            rng.random_range(0..=src.len() - target_len)
        } else {
            rng.random_range(0..src.len())
        };
        for (k, o) in out.iter_mut().enumerate() {
            *o += src[(offset + k) % src.len()];
        }
        draws.push(NoiseDraw {
            noise_id: rec.id.clone(),
            offset,
        });
    }
    Ok((
        AudioSignal {
            samples: out,
            sample_rate_hz: rate,
        },
        draws,
    ))
}

/// Playback-rate change by `factor`: the signal is treated as if recorded at
/// `rate * factor` and resampled back to `rate`, so the output has
/// `round(len / factor)` samples.
pub fn speed_perturb(signal: &AudioSignal, factor: f64) -> Result<AudioSignal> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::domain(format!("speed factor {factor} must be positive")));
    }
    if factor == 1.0 {
        return Ok(signal.clone());
    }
    Ok(AudioSignal {
        samples: resample_by_ratio(&signal.samples, 1.0 / factor),
        sample_rate_hz: signal.sample_rate_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::rooms::NoiseRecording;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig(x: Vec<f64>) -> AudioSignal {
        AudioSignal::new(x, 16000).unwrap()
    }

    #[test]
    fn gain_closed_forms() {
        assert!((snr_gain(1.0, 1.0, 0.0) - 1.0).abs() < 1e-15);
        assert!((snr_gain(1.0, 1.0, 20.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn equal_power_zero_db_has_unit_gain() {
        let s = sig(vec![0.5, -0.5, 0.5, -0.5]);
        let n = sig(vec![-0.5, 0.5, 0.5, -0.5, 0.9]);
        let m = mix_at_snr(&s, &n, 0.0).unwrap();
        assert!((m.gain - 1.0).abs() < 1e-15);
        assert_eq!(m.signal.len(), 4);
    }

    #[test]
    fn mix_errors() {
        let s = sig(vec![0.5; 4]);
        assert!(matches!(mix_at_snr(&s, &sig(vec![0.0; 4]), 10.0), Err(Error::Degenerate(_))));
        assert!(matches!(mix_at_snr(&sig(vec![0.0; 4]), &s, 10.0), Err(Error::Degenerate(_))));
        assert!(matches!(mix_at_snr(&s, &sig(vec![0.1; 3]), 10.0), Err(Error::Domain(_))));
    }

    fn pool(recs: Vec<(&str, Vec<f64>)>) -> NoisePool {
        NoisePool {
            recordings: recs
                .into_iter()
                .map(|(id, x)| NoiseRecording {
                    id: id.into(),
                    signal: sig(x),
                })
                .collect(),
        }
    }

    #[test]
    fn single_noise_is_contiguous_crop() {
        let rec: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let p = pool(vec![("ramp", rec.clone())]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (out, draws) = superpose_noises(&p, 1, 40, &mut rng).unwrap();
        let off = draws[0].offset;
        assert!(off + 40 <= 100);
        assert_eq!(out.samples, rec[off..off + 40].to_vec());
    }

    #[test]
    fn constants_add_up() {
        let p = pool(vec![("a", vec![0.1; 10]), ("b", vec![0.25; 7])]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (out, draws) = superpose_noises(&p, 3, 20, &mut rng).unwrap();
        assert_eq!(draws.len(), 2);
        assert!(out.samples.iter().all(|v| (v - 0.35).abs() < 1e-15));
    }

    #[test]
    fn empty_pool_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = NoisePool { recordings: vec![] };
        assert!(matches!(superpose_noises(&p, 1, 4, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn speed_lengths() {
        let s = sig(vec![0.0; 16000]);
        assert_eq!(speed_perturb(&s, 1.0).unwrap(), s);
        assert_eq!(speed_perturb(&s, 1.1).unwrap().len(), 14545);
        assert_eq!(speed_perturb(&s, 0.9).unwrap().len(), 17778);
        assert!(speed_perturb(&s, 0.0).is_err());
    }
}
