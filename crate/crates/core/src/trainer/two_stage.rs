use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{init_for_data, train_stage, transfer_init, Example, StageConfig, TrainOutcome};
use crate::acoustic_model::{Checkpoint, ModelConfig};
use crate::alignment::Alignment;
use crate::augment::{build_multicondition, AugmentationSpec, Condition, NoisePool, RoomGroup, SPEED_FACTORS};
use crate::error::{Error, Result};
use crate::features::FeaturePipeline;
use crate::manifest::Manifest;

use super::prepare_examples;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setup {
    Baseline,
    Stage1Only,
    Stage2Only,
    TwoStaged,
}

impl Setup {
    pub const ALL: [Setup; 4] = [Setup::Baseline, Setup::Stage1Only, Setup::Stage2Only, Setup::TwoStaged];

    pub fn tag(self) -> &'static str {
        match self {
            Setup::Baseline => "baseline",
            Setup::Stage1Only => "stage1_only",
            Setup::Stage2Only => "stage2_only",
            Setup::TwoStaged => "two_staged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoStageConfig {
    pub model: ModelConfig,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub augmentation: AugmentationSpec,
    /// Seeds model initialization and corpus augmentation.
    pub seed: u64,
    #[serde(default = "default_speed_factors")]
    pub speed_factors: Vec<f64>,
}

pub fn default_speed_factors() -> Vec<f64> {
    SPEED_FACTORS.to_vec()
}

impl TwoStageConfig {
    pub fn desk(num_outputs: usize) -> Self {
        TwoStageConfig {
            model: ModelConfig::desk(num_outputs),
            stage1: StageConfig::stage1(),
            stage2: StageConfig::stage2(),
            augmentation: AugmentationSpec::default(),
            seed: 0,
            speed_factors: default_speed_factors(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        self.augmentation.validate()?;
        if self.speed_factors.is_empty() || self.speed_factors.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::config("speed factors must be positive and non-empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetupCheckpoints {
    pub baseline: Checkpoint,
    pub stage1_only: Checkpoint,
    pub stage2_only: Checkpoint,
    pub two_staged: Checkpoint,
}

impl SetupCheckpoints {
    pub fn get(&self, s: Setup) -> &Checkpoint {
        match s {
            Setup::Baseline => &self.baseline,
            Setup::Stage1Only => &self.stage1_only,
            Setup::Stage2Only => &self.stage2_only,
            Setup::TwoStaged => &self.two_staged,
        }
    }
}

fn tagged(mut ck: Checkpoint, s: Setup) -> Checkpoint {
    ck.meta.stage = s.tag().into();
    ck
}

/// Trains the baseline on the clean part of `multi` and the stage-1 model
/// on all of it. Both start from the same random weights and use the same
/// stage-1 settings; each fits its input normalization to its own data.
pub fn train_source_models(multi: &[Example], cfg: &TwoStageConfig) -> Result<(TrainOutcome, TrainOutcome)> {
    let clean: Vec<Example> = multi.iter().filter(|e| e.condition_tag == Condition::Clean.tag()).cloned().collect();
    if clean.is_empty() {
        return Err(Error::data("multi-condition data has no clean utterances"));
    }
    let mut baseline = train_stage(&init_for_data(&cfg.model, cfg.seed, &clean)?, &clean, &cfg.stage1)?;
    let mut stage1 = train_stage(&init_for_data(&cfg.model, cfg.seed, multi)?, multi, &cfg.stage1)?;
    baseline.checkpoint = tagged(baseline.checkpoint, Setup::Baseline);
    stage1.checkpoint = tagged(stage1.checkpoint, Setup::Stage1Only);
    Ok((baseline, stage1))
}

/// Stage-2 fine-tuning of both source models on the same target data.
pub fn transfer_models(
    baseline: &Checkpoint,
    stage1: &Checkpoint,
    target: &[Example],
    cfg: &TwoStageConfig,
) -> Result<(Checkpoint, Checkpoint)> {
    let from_baseline = transfer_init(baseline, &cfg.model)?;
    let from_stage1 = transfer_init(stage1, &cfg.model)?;
    let stage2_only = train_stage(&from_baseline, target, &cfg.stage2)?.checkpoint;
    let two_staged = train_stage(&from_stage1, target, &cfg.stage2)?.checkpoint;
    Ok((tagged(stage2_only, Setup::Stage2Only), tagged(two_staged, Setup::TwoStaged)))
}

pub struct TwoStageInputs<'a> {
    pub clean_manifest: &'a Manifest,
    pub clean_alignments: &'a BTreeMap<String, Alignment>,
    pub target_manifest: &'a Manifest,
    pub target_alignments: &'a BTreeMap<String, Alignment>,
    pub rooms: &'a [RoomGroup],
    pub pool: &'a NoisePool,
    /// Receives the augmented corpus.
    pub workdir: &'a Path,
}

/// All four setups end to end: augment the clean corpus, train the two
/// source models, fine-tune each on the target data.
pub fn run_two_staged(inputs: &TwoStageInputs, cfg: &TwoStageConfig) -> Result<SetupCheckpoints> {
    cfg.validate()?;
    let pipeline = FeaturePipeline::default();
    let multi = build_multicondition(
        inputs.clean_manifest,
        inputs.rooms,
        inputs.pool,
        &cfg.augmentation,
        cfg.seed,
        inputs.workdir.join("multicondition"),
    )?;
    let multi_ex = prepare_examples(&multi.manifest, inputs.clean_alignments, &pipeline, &cfg.speed_factors)?;
    let target_ex = prepare_examples(inputs.target_manifest, inputs.target_alignments, &pipeline, &cfg.speed_factors)?;
    let (baseline, stage1_only) = train_source_models(&multi_ex, cfg)?;
    let (baseline, stage1_only) = (baseline.checkpoint, stage1_only.checkpoint);
    let (stage2_only, two_staged) = transfer_models(&baseline, &stage1_only, &target_ex, cfg)?;
    Ok(SetupCheckpoints {
        baseline,
        stage1_only,
        stage2_only,
        two_staged,
    })
}
