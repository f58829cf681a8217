//! Stage-wise SGD training, full-weight transfer between stages, and the
//! four-setup comparison (baseline, stage 1 only, stage 2 only, two-staged).

mod data;
mod two_stage;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use data::{prepare_examples, source_utt_id, Example};
pub use two_stage::{
    default_speed_factors, run_two_staged, train_source_models, transfer_models, Setup, SetupCheckpoints, TwoStageConfig, TwoStageInputs,
};

use crate::acoustic_model::{build_model, dropout_rate, layer_names, Checkpoint, DropoutSchedule, Gradients, Mode, ModelConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stage1,
    Stage2,
}

impl Stage {
    pub fn tag(self) -> &'static str {
        match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub stage: Stage,
    pub lr_init: f64,
    pub lr_final: f64,
    pub epochs: usize,
    pub dropout: DropoutSchedule,
    pub batch_utts: usize,
    pub seed: u64,
    /// Upper bound on the L2 norm of each layer's update per step.
    #[serde(default)]
    pub max_change: Option<f64>,
}

impl StageConfig {
    /// Multi-condition source training: 1e-3 to 1e-4 over four epochs with
    /// the ramped dropout schedule.
    pub fn stage1() -> Self {
        StageConfig {
            stage: Stage::Stage1,
            lr_init: 1e-3,
            lr_final: 1e-4,
            epochs: 4,
            dropout: DropoutSchedule::stage1(),
            batch_utts: 2,
            seed: 0,
            max_change: Some(DEFAULT_MAX_CHANGE),
        }
    }

    /// Transfer fine-tuning: 1e-6 to 1e-7 over four epochs, no dropout.
    pub fn stage2() -> Self {
        StageConfig {
            stage: Stage::Stage2,
            lr_init: 1e-6,
            lr_final: 1e-7,
            dropout: DropoutSchedule::constant_zero(),
            ..Self::stage1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_init > 0.0 && self.lr_final > 0.0 && self.lr_init.is_finite()) {
            return Err(Error::config("learning rates must be positive"));
        }
        if self.lr_final >= self.lr_init {
            return Err(Error::config("final learning rate must be below the initial one"));
        }
        if self.batch_utts == 0 {
            return Err(Error::config("batch_utts must be positive"));
        }
        if self.max_change.is_some_and(|m| !(m > 0.0)) {
            return Err(Error::config("max_change must be positive"));
        }
        Ok(())
    }
}

pub const DEFAULT_MAX_CHANGE: f64 = 2.0;

/// `lr_init * (lr_final / lr_init)^progress`.
pub fn lr_at(config: &StageConfig, progress: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(Error::domain(format!("progress {progress} outside [0, 1]")));
    }
    Ok(config.lr_init * (config.lr_final / config.lr_init).powf(progress))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub progress: f64,
    pub lr: f64,
    pub dropout: f64,
    pub loss: f64,
    pub frame_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub frame_acc: f64,
    pub frames: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

/// SplitMix64 finalizer over a combined key, for independent RNG streams.
fn stream_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Number of optimizer steps for `n` utterances.
pub fn total_steps(config: &StageConfig, n: usize) -> usize {
    config.epochs * n.div_ceil(config.batch_utts)
}

fn first_bad_layer(model: &crate::acoustic_model::Model, g: &Gradients) -> usize {
    let names = layer_names(model);
    g.tensors()
        .iter()
        .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
        .and_then(|(n, _)| names.iter().position(|(l, _)| n.starts_with(&format!("{l}."))))
        .unwrap_or(names.len() - 1)
}

/// Mini-batch SGD over `epochs` passes of `data`.
///
/// Each step sums per-frame gradients within each utterance, averages those
/// sums over the `batch_utts` utterances of the batch and moves by
/// `lr_at(progress)` times the result; progress runs from 0 at the first
/// step to 1 at the last. Utterance order is reshuffled every epoch from
/// `config.seed`, and each utterance's dropout masks come from its own
/// stream, so results do not depend on the thread count. `on_epoch` sees the
/// checkpoint after every epoch; a numeric failure aborts with the last good
/// checkpoint already handed out.
pub fn train_stage_with<F>(init: &Checkpoint, data: &[Example], config: &StageConfig, mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(&Checkpoint, &EpochRecord) -> Result<()>,
{
    config.validate()?;
    let mut ck = init.clone();
    let model_in = ck.model.config.input_dim;
    if let Some(bad) = data.iter().find(|e| e.inputs.ncols() != model_in) {
        return Err(Error::data(format!("{}: {}-dim features, model expects {model_in}", bad.utt_id, bad.inputs.ncols())));
    }
    let n_out = ck.model.num_outputs();
    if let Some(bad) = data.iter().find(|e| e.targets.iter().any(|&c| c >= n_out)) {
        return Err(Error::data(format!("{}: target id outside {n_out} classes", bad.utt_id)));
    }
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    if config.epochs == 0 || data.is_empty() {
        return Ok(TrainOutcome {
            checkpoint: ck,
            steps,
            epochs,
        });
    }

    let total = total_steps(config, data.len());
    let mut step = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(config.seed, 1, epoch as u64)));
        let (mut ep_loss, mut ep_correct, mut ep_frames) = (0.0, 0usize, 0usize);
        for batch in order.chunks(config.batch_utts) {
            let progress = if total > 1 { step as f64 / (total - 1) as f64 } else { 0.0 };
            let lr = lr_at(config, progress)?;
            let rate = dropout_rate(&config.dropout, progress)?;
            let model = &ck.model;
            let results: Vec<_> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, 2 + step as u64, i as u64));
                    let ex = &data[i];
                    model.loss_and_gradients(ex.inputs.view(), &ex.targets, rate, &mut rng, Mode::Train)
                })
                .collect::<Result<_>>()?;
            let mut grads = model.zero_gradients();
            let (mut loss, mut correct, mut frames) = (0.0, 0usize, 0usize);
            for r in &results {
                grads.add_assign(&r.gradients);
                loss += r.loss * r.num_frames as f64;
                correct += r.correct;
                frames += r.num_frames;
            }
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Numeric {
                    layer: first_bad_layer(model, &grads),
                    reason: format!("non-finite loss or gradient at step {step}"),
                });
            }
            grads.scale(1.0 / batch.len() as f64);
            ck.model.apply_gradients(&grads, lr, config.max_change);
            steps.push(StepRecord {
                step,
                epoch,
                progress,
                lr,
                dropout: rate,
                loss: loss / frames as f64,
                frame_acc: correct as f64 / frames as f64,
            });
            ep_loss += loss;
            ep_correct += correct;
            ep_frames += frames;
            step += 1;
        }
        ck.meta.stage = config.stage.tag().into();
        ck.meta.epoch = epoch + 1;
        ck.meta.seed = config.seed;
        let rec = EpochRecord {
            epoch,
            loss: ep_loss / ep_frames as f64,
            frame_acc: ep_correct as f64 / ep_frames as f64,
            frames: ep_frames,
        };
        log::info!("{} epoch {}: loss {:.4} frame acc {:.4}", config.stage.tag(), epoch, rec.loss, rec.frame_acc);
        on_epoch(&ck, &rec)?;
        epochs.push(rec);
    }
    Ok(TrainOutcome {
        checkpoint: ck,
        steps,
        epochs,
    })
}

pub fn train_stage(init: &Checkpoint, data: &[Example], config: &StageConfig) -> Result<TrainOutcome> {
    train_stage_with(init, data, config, |_, _| Ok(()))
}

pub fn metrics_csv(steps: &[StepRecord]) -> String {
    let mut s = String::from("step,epoch,progress,lr,dropout,loss,frame_acc\n");
    for r in steps {
        writeln!(s, "{},{},{:.6},{:.6e},{:.6},{:.6},{:.6}", r.step, r.epoch, r.progress, r.lr, r.dropout, r.loss, r.frame_acc).unwrap();
    }
    s
}

pub fn write_metrics_csv(steps: &[StepRecord], path: &Path) -> Result<()> {
    std::fs::write(path, metrics_csv(steps)).map_err(|e| Error::io(path, e))
}

/// Randomly initialized model whose input normalization is fitted to `data`.
pub fn init_for_data(config: &ModelConfig, seed: u64, data: &[Example]) -> Result<Checkpoint> {
    let mut ck = build_model(config, seed)?;
    ck.model.fit_input_norm(data.iter().map(|e| e.inputs.view()))?;
    Ok(ck)
}

/// Frame accuracy and mean NLL of a model on `data` (eval mode).
pub fn evaluate_frames(ck: &Checkpoint, data: &[Example]) -> Result<(f64, f64)> {
    let per: Vec<(f64, usize, usize)> = data
        .par_iter()
        .map(|ex| {
            let lp = ck.model.predict(ex.inputs.view())?;
            let mut nll = 0.0;
            let mut correct = 0;
            for (row, &c) in lp.rows().into_iter().zip(&ex.targets) {
                nll -= row[c];
                let best = row.iter().enumerate().fold(0, |b, (k, &v)| if v > row[b] { k } else { b });
                correct += usize::from(best == c);
            }
            Ok((nll, correct, ex.targets.len()))
        })
        .collect::<Result<_>>()?;
    let frames: usize = per.iter().map(|p| p.2).sum();
    if frames == 0 {
        return Err(Error::data("no frames to evaluate"));
    }
    let correct: usize = per.iter().map(|p| p.1).sum();
    let nll: f64 = per.iter().map(|p| p.0).sum();
    Ok((correct as f64 / frames as f64, nll / frames as f64))
}

/// Copies every tensor of `source`, output layer included, into a
/// checkpoint for `target_config`. Fails when the architectures differ.
pub fn transfer_init(source: &Checkpoint, target_config: &ModelConfig) -> Result<Checkpoint> {
    target_config.validate()?;
    let src = &source.model.config;
    let mut mismatches = Vec::new();
    if src.input_dim != target_config.input_dim {
        mismatches.push(format!("input: dim {} vs {}", src.input_dim, target_config.input_dim));
    }
    let (a, b) = (src.effective_layers(), target_config.effective_layers());
    if a.len() != b.len() {
        mismatches.push(format!("hidden layer count {} vs {}", a.len(), b.len()));
    }
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        if x != y {
            mismatches.push(format!("layer{i:02}: {x:?} vs {y:?}"));
        }
    }
    if src.num_outputs != target_config.num_outputs {
        mismatches.push(format!(
            "output layer: num_outputs {} vs {}",
            src.num_outputs, target_config.num_outputs
        ));
    }
    if !mismatches.is_empty() {
        return Err(Error::Transfer { mismatches });
    }
    let mut out = source.clone();
    out.meta.stage = "stage2-init".into();
    out.meta.epoch = 0;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustic_model::LayerSpec;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn lr_schedule() {
        let s1 = StageConfig::stage1();
        assert_eq!(lr_at(&s1, 0.0).unwrap(), 1e-3);
        assert!((lr_at(&s1, 1.0).unwrap() - 1e-4).abs() < 1e-18);
        assert!((lr_at(&s1, 0.5).unwrap() - (1e-3f64 * 1e-4).sqrt()).abs() < 1e-15);
        assert!((lr_at(&StageConfig::stage2(), 1.0).unwrap() - 1e-7).abs() < 1e-21);
        assert!(lr_at(&s1, 1.5).is_err());
        let mut prev = f64::INFINITY;
        for k in 0..=50 {
            let v = lr_at(&s1, k as f64 / 50.0).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    fn tiny() -> ModelConfig {
        ModelConfig {
            input_dim: 4,
            layers: vec![LayerSpec::tdnn(&[-1, 0, 1], 8), LayerSpec::lstmp(6, 4)],
            num_outputs: 3,
            scale_factor: 1.0,
        }
    }

    /// Three well-separated Gaussian clusters, one per class.
    fn separable(n: usize, seed: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let targets: Vec<usize> = (0..12).map(|t| (t / 4 + i) % 3).collect();
                let inputs = Array2::from_shape_fn((12, 4), |(t, d)| {
                    let c = targets[t];
                    (if d == c { 2.0 } else { 0.0 }) + 0.3 * rng.random_range(-1.0..1.0)
                });
                Example {
                    utt_id: format!("u{i}"),
                    speaker_id: "s".into(),
                    condition_tag: "clean".into(),
                    inputs,
                    targets,
                    transcript: vec![],
                }
            })
            .collect()
    }

    fn cfg() -> StageConfig {
        StageConfig {
            lr_init: 0.02,
            lr_final: 0.005,
            batch_utts: 4,
            seed: 9,
            dropout: DropoutSchedule::constant_zero(),
            ..StageConfig::stage1()
        }
    }

    #[test]
    fn loss_decreases_every_epoch() {
        let init = build_model(&tiny(), 1).unwrap();
        let data = separable(10, 2);
        let out = train_stage(&init, &data, &cfg()).unwrap();
        assert_eq!(out.epochs.len(), 4);
        for w in out.epochs.windows(2) {
            assert!(w[1].loss < w[0].loss, "{:?}", out.epochs);
        }
        assert_eq!(out.steps.len(), 4 * 3);
        assert_eq!(out.checkpoint.meta.stage, "stage1");
        assert!(metrics_csv(&out.steps).lines().count() == 13);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let init = build_model(&tiny(), 1).unwrap();
        let out = train_stage(&init, &separable(3, 2), &StageConfig { epochs: 0, ..cfg() }).unwrap();
        assert_eq!(out.checkpoint, init);
        assert!(out.steps.is_empty());
    }

    #[test]
    fn reproducible_across_thread_counts() {
        let init = build_model(&tiny(), 1).unwrap();
        let data = separable(9, 3);
        let c = StageConfig {
            dropout: DropoutSchedule::stage1(),
            ..cfg()
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train_stage(&init, &data, &c).unwrap().checkpoint)
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn transfer_guards() {
        let src = build_model(&tiny(), 1).unwrap();
        let t = transfer_init(&src, &tiny()).unwrap();
        assert_eq!(t.model, src.model);
        assert_eq!(t.meta.stage, "stage2-init");
        let other = ModelConfig {
            num_outputs: 5,
            ..tiny()
        };
        match transfer_init(&src, &other) {
            Err(Error::Transfer { mismatches }) => {
                assert_eq!(mismatches.len(), 1);
                assert!(mismatches[0].starts_with("output layer"));
            }
            r => panic!("{r:?}"),
        }
    }

    #[test]
    fn rejects_bad_targets() {
        let init = build_model(&tiny(), 1).unwrap();
        let mut data = separable(2, 1);
        data[1].targets[0] = 7;
        assert!(matches!(train_stage(&init, &data, &cfg()), Err(Error::Data(_))));
    }
}
