use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;

use crate::alignment::Alignment;
use crate::audio::{read_wav, AudioSignal};
use crate::augment::{speed_perturb, speed_prefix, Condition};
use crate::error::{Error, Result};
use crate::features::FeaturePipeline;
use crate::manifest::{Manifest, Utterance};

/// Network inputs and frame targets of one (possibly speed-perturbed) utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub utt_id: String,
    pub speaker_id: String,
    pub condition_tag: String,
    /// `T x 300`
    pub inputs: Array2<f64>,
    pub targets: Vec<usize>,
    pub transcript: Vec<String>,
}

impl Example {
    pub fn num_frames(&self) -> usize {
        self.targets.len()
    }
}

/// Id of the clean utterance an augmented copy was derived from.
pub fn source_utt_id(u: &Utterance) -> &str {
    for cond in [Condition::Reverb, Condition::ReverbRealNoise] {
        if u.condition_tag == cond.tag() {
            if let Some(base) = u.utt_id.strip_suffix(&format!("-{}", cond.tag())) {
                return base;
            }
        }
    }
    &u.utt_id
}

fn example_from(
    u: &Utterance,
    audio: &AudioSignal,
    ali: &Alignment,
    factor: f64,
    pipeline: &FeaturePipeline,
) -> Result<Example> {
    let (signal, ali, utt_id) = if factor == 1.0 {
        (audio.clone(), ali.clone(), u.utt_id.clone())
    } else {
        let y = speed_perturb(audio, factor)?;
        let a = ali.speed_scaled(factor, y.len());
        (y, a, format!("{}{}", speed_prefix(factor), u.utt_id))
    };
    let inputs = pipeline.extract(&signal, &utt_id)?;
    let targets = ali.frame_targets(pipeline.mfcc_config());
    if targets.len() != inputs.nrows() {
        return Err(Error::data(format!("{utt_id}: {} targets for {} frames", targets.len(), inputs.nrows())));
    }
    Ok(Example {
        utt_id,
        speaker_id: u.speaker_id.clone(),
        condition_tag: u.condition_tag.clone(),
        inputs,
        targets,
        transcript: u.transcript.clone(),
    })
}

/// Features and targets for every utterance of `manifest`, once per speed
/// factor (`1.0` keeps the original). Output order is utterance-major,
/// factor-minor, independent of the thread count.
pub fn prepare_examples(
    manifest: &Manifest,
    alignments: &BTreeMap<String, Alignment>,
    pipeline: &FeaturePipeline,
    speed_factors: &[f64],
) -> Result<Vec<Example>> {
    let per_utt: Vec<Vec<Example>> = manifest
        .utterances
        .par_iter()
        .map(|u| {
            let src = source_utt_id(u);
            let ali = alignments
                .get(src)
                .ok_or_else(|| Error::data(format!("no alignment for {src} (utterance {})", u.utt_id)))?;
            let audio = read_wav(manifest.audio_file(u))?;
            if audio.len() != ali.num_samples {
                return Err(Error::data(format!(
                    "{}: audio has {} samples, alignment {}",
                    u.utt_id,
                    audio.len(),
                    ali.num_samples
                )));
            }
            speed_factors
                .iter()
                .map(|&f| example_from(u, &audio, ali, f, pipeline))
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_utt.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn augmented_ids_resolve_to_source() {
        let mut u = Utterance {
            utt_id: "spk1-u001-reverb_real_noise".into(),
            speaker_id: "spk1".into(),
            audio_path: "x.wav".into(),
            transcript: vec![],
            condition_tag: "reverb_real_noise".into(),
            duration_s: 1.0,
        };
        assert_eq!(source_utt_id(&u), "spk1-u001");
        u.condition_tag = "reverb".into();
        assert_eq!(source_utt_id(&u), "spk1-u001-reverb_real_noise");
        u.utt_id = "a-reverb".into();
        assert_eq!(source_utt_id(&u), "a");
        u.condition_tag = "clean".into();
        assert_eq!(source_utt_id(&u), "a-reverb");
    }
}
