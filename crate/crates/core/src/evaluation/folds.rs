use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::Manifest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub held_out_speaker: String,
    pub train_utt_ids: Vec<String>,
    pub eval_utt_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

/// One fold per speaker, ordered by speaker id. Utterance ids keep manifest order.
pub fn loso_folds(manifest: &Manifest) -> Result<FoldPlan> {
    let speakers = manifest.speakers();
    if speakers.len() < 2 {
        return Err(Error::config(format!(
            "leave-one-speaker-out needs at least two speakers, manifest has {}",
            speakers.len()
        )));
    }
    let folds = speakers
        .into_iter()
        .map(|spk| {
            let (eval, train): (Vec<_>, Vec<_>) = manifest.iter().partition(|u| u.speaker_id == spk);
            Fold {
                held_out_speaker: spk.to_string(),
                train_utt_ids: train.into_iter().map(|u| u.utt_id.clone()).collect(),
                eval_utt_ids: eval.into_iter().map(|u| u.utt_id.clone()).collect(),
            }
        })
        .collect();
    Ok(FoldPlan { folds })
}
