//! Leave-one-speaker-out experiment driver.
//!
//! Stage 1 runs once; every fold fine-tunes both source models on the
//! remaining target speakers and scores the held-out one with all four
//! setups. Work directory layout:
//!
//! ```text
//! config_hash                 hash of the config that owns the directory
//! multicondition/             augmented source corpus
//! stage1/                     baseline.ckpt, stage1_only.ckpt, metrics, DONE
//! folds/NN-<speaker>/         stage2_only.ckpt, two_staged.ckpt, fold.json, DONE
//! reports/                    wer.csv, wer.json, boxplot.dat, relative_improvement.csv,
//!                             ablation.csv, frame_accuracy.csv, summary.json
//! ```
//!
//! `DONE` markers hold the config hash; completed stages are loaded instead
//! of recomputed on the next run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acoustic_model::{read_checkpoint, write_checkpoint, Checkpoint, ModelConfig};
use crate::alignment::read_alignments;
use crate::audio::CORPUS_RATE_HZ;
use crate::augment::{build_multicondition, load_noise_pool, load_rir_database, AugmentationSpec};
use crate::error::{Error, Result};
use crate::evaluation::{
    boxplot_gnuplot, build_report, greedy_decode, loso_folds, relative_improvement, report_csv, score_by_speaker, Fold,
    Hypothesis, ScoringOptions, SymbolTable, WerReport,
};
use crate::features::FeaturePipeline;
use crate::manifest::Manifest;
use crate::trainer::{
    default_speed_factors, metrics_csv, prepare_examples, train_source_models, train_stage, transfer_init, Example, Setup,
    Stage, StageConfig, StepRecord, TwoStageConfig,
};

/// Bundled JSON schema of [`ExperimentConfig`].
pub const EXPERIMENT_SCHEMA: &str = include_str!("../assets/experiment.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPaths {
    pub source_manifest: PathBuf,
    pub source_alignments: PathBuf,
    pub target_manifest: PathBuf,
    pub target_alignments: PathBuf,
    pub rir_dir: PathBuf,
    pub noise_dir: PathBuf,
    /// Output symbol table; `<sil>, w01, ...` when absent.
    #[serde(default)]
    pub symbols: Option<PathBuf>,
    pub workdir: PathBuf,
}

impl ExperimentPaths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.source_manifest,
            &mut self.source_alignments,
            &mut self.target_manifest,
            &mut self.target_alignments,
            &mut self.rir_dir,
            &mut self.noise_dir,
            &mut self.workdir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = self.symbols.as_mut().filter(|p| p.is_relative()) {
            *p = base.join(&*p);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: ExperimentPaths,
    pub augmentation: AugmentationSpec,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub scoring: ScoringOptions,
    pub seed: u64,
    #[serde(default = "default_speed_factors")]
    pub speed_factors: Vec<f64>,
}

impl ExperimentConfig {
    /// Default stages and the desk-scale model over the given inputs.
    pub fn desk(paths: ExperimentPaths, num_outputs: usize) -> Self {
        let t = TwoStageConfig::desk(num_outputs);
        ExperimentConfig {
            paths,
            augmentation: t.augmentation,
            stage1: t.stage1,
            stage2: t.stage2,
            model: t.model,
            scoring: ScoringOptions::default(),
            seed: t.seed,
            speed_factors: t.speed_factors,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.paths.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        self.two_stage().validate()?;
        if self.stage1.stage != Stage::Stage1 || self.stage2.stage != Stage::Stage2 {
            return Err(Error::config("stage1/stage2 entries carry the wrong stage tag"));
        }
        Ok(())
    }

    pub fn two_stage(&self) -> TwoStageConfig {
        TwoStageConfig {
            model: self.model.clone(),
            stage1: self.stage1.clone(),
            stage2: self.stage2.clone(),
            augmentation: self.augmentation.clone(),
            seed: self.seed,
            speed_factors: self.speed_factors.clone(),
        }
    }

    /// SHA-256 over the serialized config with the work directory blanked,
    /// so moving a run does not change its identity.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths.workdir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Clone, Default)]
pub struct LosoOptions {
    /// Stop after the first `n` folds (resume later with a larger limit).
    pub fold_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupResult {
    pub setup: Setup,
    pub correct_frames: usize,
    pub frames: usize,
    pub hypotheses: Vec<Hypothesis>,
}

/// Everything a finished fold contributes to the reports (`fold.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub config_hash: String,
    pub held_out_speaker: String,
    pub setups: Vec<SetupResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeRow {
    pub speaker_id: String,
    /// Percent WER reduction of two_staged against baseline; `None` when the
    /// baseline WER is zero.
    pub improvement: Option<f64>,
}

/// Relative WER change against two_staged when one stage is dropped;
/// negative means the reduced system is worse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub speaker_id: String,
    pub removed_augmentation: Option<f64>,
    pub removed_transfer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAccuracy {
    pub setup: Setup,
    pub correct_frames: usize,
    pub frames: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoOutcome {
    pub config_hash: String,
    /// One report per setup, in [`Setup::ALL`] order.
    pub reports: Vec<WerReport>,
    /// Sorted by improvement, ascending.
    pub relative: Vec<RelativeRow>,
    /// Same speaker order as `relative`.
    pub ablation: Vec<AblationRow>,
    pub frame_accuracy: Vec<FrameAccuracy>,
    pub folds: Vec<FoldResult>,
}

impl LosoOutcome {
    pub fn report(&self, setup: Setup) -> &WerReport {
        &self.reports[Setup::ALL.iter().position(|&s| s == setup).expect("every setup reported")]
    }

    pub fn frame_accuracy(&self, setup: Setup) -> f64 {
        self.frame_accuracy.iter().find(|f| f.setup == setup).expect("every setup reported").accuracy
    }
}

const DONE: &str = "DONE";

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// `Ok(true)` if `dir` holds a completion marker for `hash`, `Ok(false)` if
/// it holds none, a config error if it was completed under another config.
fn is_done(dir: &Path, hash: &str) -> Result<bool> {
    let marker = dir.join(DONE);
    match std::fs::read_to_string(&marker) {
        Ok(found) if found.trim() == hash => Ok(true),
        Ok(found) => Err(Error::config(format!(
            "{} was produced by config {}, refusing to resume with {hash}",
            dir.display(),
            found.trim()
        ))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
        Err(e) => Err(Error::io(marker, e)),
    }
}

fn claim_workdir(workdir: &Path, hash: &str) -> Result<()> {
    create_dir(workdir)?;
    let path = workdir.join("config_hash");
    match std::fs::read_to_string(&path) {
        Ok(found) if found.trim() == hash => Ok(()),
        Ok(found) => Err(Error::config(format!(
            "work directory {} belongs to config {}, not {hash}",
            workdir.display(),
            found.trim()
        ))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => write_text(&path, &format!("{hash}\n")),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn hashed_metrics(steps: &[StepRecord], hash: &str) -> String {
    format!("# config_hash={hash}\n{}", metrics_csv(steps))
}

fn stamped(mut ck: Checkpoint, setup: Setup, hash: &str) -> Checkpoint {
    ck.meta.stage = setup.tag().into();
    ck.meta.config_hash = hash.into();
    ck
}

fn source_models(cfg: &ExperimentConfig, hash: &str) -> Result<(Checkpoint, Checkpoint)> {
    let dir = cfg.paths.workdir.join("stage1");
    let (bpath, spath) = (dir.join("baseline.ckpt"), dir.join("stage1_only.ckpt"));
    if is_done(&dir, hash)? {
        log::info!("stage 1 already complete, loading {}", dir.display());
        return Ok((read_checkpoint(&bpath)?, read_checkpoint(&spath)?));
    }
    create_dir(&dir)?;
    let source = Manifest::read_jsonl(&cfg.paths.source_manifest)?;
    let alignments = read_alignments(&cfg.paths.source_alignments)?;
    let rooms = load_rir_database(&cfg.paths.rir_dir, CORPUS_RATE_HZ)?;
    let noises = load_noise_pool(&cfg.paths.noise_dir, CORPUS_RATE_HZ)?;
    log::info!("augmenting {} source utterances", source.len());
    let multi = build_multicondition(
        &source,
        &rooms,
        &noises,
        &cfg.augmentation,
        cfg.seed,
        cfg.paths.workdir.join("multicondition"),
    )?;
    let examples = prepare_examples(&multi.manifest, &alignments, &FeaturePipeline::default(), &cfg.speed_factors)?;
    log::info!("training source models on {} examples", examples.len());
    let (baseline, stage1) = train_source_models(&examples, &cfg.two_stage())?;
    let b = stamped(baseline.checkpoint, Setup::Baseline, hash);
    let s = stamped(stage1.checkpoint, Setup::Stage1Only, hash);
    write_checkpoint(&b, &bpath)?;
    write_checkpoint(&s, &spath)?;
    write_text(&dir.join("metrics_baseline.csv"), &hashed_metrics(&baseline.steps, hash))?;
    write_text(&dir.join("metrics_stage1_only.csv"), &hashed_metrics(&stage1.steps, hash))?;
    write_text(&dir.join(DONE), &format!("{hash}\n"))?;
    Ok((b, s))
}

/// Frame accuracy counts and greedy-decoded hypotheses of one model.
pub fn evaluate_setup(ck: &Checkpoint, setup: Setup, data: &[Example], symbols: &SymbolTable) -> Result<SetupResult> {
    let per: Vec<(usize, usize, Hypothesis)> = data
        .par_iter()
        .map(|ex| {
            let lp = ck.model.predict(ex.inputs.view())?;
            let mut correct = 0;
            for (row, &c) in lp.rows().into_iter().zip(&ex.targets) {
                let best = row.iter().enumerate().fold(0, |b, (k, &v)| if v > row[b] { k } else { b });
                correct += usize::from(best == c);
            }
            let words = greedy_decode(lp.view(), symbols)?;
            Ok((
                correct,
                ex.num_frames(),
                Hypothesis {
                    utt_id: ex.utt_id.clone(),
                    words,
                },
            ))
        })
        .collect::<Result<_>>()?;
    Ok(SetupResult {
        setup,
        correct_frames: per.iter().map(|p| p.0).sum(),
        frames: per.iter().map(|p| p.1).sum(),
        hypotheses: per.into_iter().map(|p| p.2).collect(),
    })
}

struct FoldContext<'a> {
    cfg: &'a ExperimentConfig,
    hash: &'a str,
    baseline: &'a Checkpoint,
    stage1: &'a Checkpoint,
    train: &'a [Example],
    eval: &'a [Example],
    symbols: &'a SymbolTable,
}

fn fold_dir(cfg: &ExperimentConfig, index: usize, fold: &Fold) -> PathBuf {
    cfg.paths.workdir.join("folds").join(format!("{index:02}-{}", fold.held_out_speaker))
}

fn read_fold(dir: &Path) -> Result<FoldResult> {
    let path = dir.join("fold.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path,
        reason: e.to_string(),
    })
}

fn run_fold(ctx: &FoldContext, index: usize, fold: &Fold) -> Result<FoldResult> {
    let dir = fold_dir(ctx.cfg, index, fold);
    let result_path = dir.join("fold.json");
    if is_done(&dir, ctx.hash)? {
        return read_fold(&dir);
    }
    create_dir(&dir)?;
    let spk = fold.held_out_speaker.as_str();
    let train: Vec<Example> = ctx.train.iter().filter(|e| e.speaker_id != spk).cloned().collect();
    let eval: Vec<Example> = ctx.eval.iter().filter(|e| e.speaker_id == spk).cloned().collect();
    log::info!("fold {index} ({spk}): {} training, {} evaluation examples", train.len(), eval.len());

    let mut tuned = Vec::new();
    for (setup, source) in [(Setup::Stage2Only, ctx.baseline), (Setup::TwoStaged, ctx.stage1)] {
        let init = transfer_init(source, &ctx.cfg.model)?;
        let out = train_stage(&init, &train, &ctx.cfg.stage2)?;
        let ck = stamped(out.checkpoint, setup, ctx.hash);
        write_checkpoint(&ck, &dir.join(format!("{}.ckpt", setup.tag())))?;
        write_text(&dir.join(format!("metrics_{}.csv", setup.tag())), &hashed_metrics(&out.steps, ctx.hash))?;
        tuned.push(ck);
    }
    let models = [ctx.baseline, ctx.stage1, &tuned[0], &tuned[1]];
    let setups = Setup::ALL
        .iter()
        .zip(models)
        .map(|(&s, ck)| evaluate_setup(ck, s, &eval, ctx.symbols))
        .collect::<Result<Vec<_>>>()?;
    let result = FoldResult {
        config_hash: ctx.hash.to_string(),
        held_out_speaker: fold.held_out_speaker.clone(),
        setups,
    };
    write_text(&result_path, &(serde_json::to_string_pretty(&result).expect("fold serializes") + "\n"))?;
    write_text(&dir.join(DONE), &format!("{}\n", ctx.hash))?;
    Ok(result)
}

fn opt_percent(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

/// Assembles reports from finished folds.
pub fn summarize(folds: &[FoldResult], target: &Manifest, scoring: &ScoringOptions, hash: &str) -> Result<LosoOutcome> {
    let speakers: Vec<&str> = folds.iter().map(|f| f.held_out_speaker.as_str()).collect();
    let evaluated = target.subset(
        target
            .iter()
            .filter(|u| speakers.contains(&u.speaker_id.as_str()))
            .map(|u| u.utt_id.as_str()),
    );
    let mut reports = Vec::new();
    let mut frame_accuracy = Vec::new();
    for (k, &setup) in Setup::ALL.iter().enumerate() {
        let mut hyps = BTreeMap::new();
        let (mut correct, mut frames) = (0, 0);
        for f in folds {
            let r = &f.setups[k];
            correct += r.correct_frames;
            frames += r.frames;
            hyps.extend(r.hypotheses.iter().map(|h| (h.utt_id.clone(), h.words.clone())));
        }
        reports.push(build_report(setup.tag(), score_by_speaker(&evaluated, &hyps, scoring)?)?);
        if frames == 0 {
            return Err(Error::data("no evaluation frames"));
        }
        frame_accuracy.push(FrameAccuracy {
            setup,
            correct_frames: correct,
            frames,
            accuracy: correct as f64 / frames as f64,
        });
    }
    let wer_of = |setup: usize, spk: &str| {
        reports[setup]
            .per_speaker
            .iter()
            .find(|s| s.speaker_id == spk)
            .map(|s| s.wer)
            .expect("speaker scored")
    };
    let [b, s1, s2, two] = [0, 1, 2, 3];
    let mut relative: Vec<RelativeRow> = reports[b]
        .per_speaker
        .iter()
        .map(|s| RelativeRow {
            speaker_id: s.speaker_id.clone(),
            improvement: relative_improvement(s.wer, wer_of(two, &s.speaker_id)).ok(),
        })
        .collect();
    relative.sort_by(|x, y| {
        let key = |r: &RelativeRow| r.improvement.unwrap_or(f64::INFINITY);
        key(x).total_cmp(&key(y)).then_with(|| x.speaker_id.cmp(&y.speaker_id))
    });
    let ablation = relative
        .iter()
        .map(|r| {
            let w2 = wer_of(two, &r.speaker_id);
            AblationRow {
                speaker_id: r.speaker_id.clone(),
                removed_augmentation: relative_improvement(w2, wer_of(s2, &r.speaker_id)).ok(),
                removed_transfer: relative_improvement(w2, wer_of(s1, &r.speaker_id)).ok(),
            }
        })
        .collect();
    Ok(LosoOutcome {
        config_hash: hash.to_string(),
        reports,
        relative,
        ablation,
        frame_accuracy,
        folds: folds.to_vec(),
    })
}

pub fn relative_csv(rows: &[RelativeRow], hash: &str) -> String {
    let mut s = format!("# config_hash={hash}\nrank,speaker_id,relative_improvement_percent\n");
    for (i, r) in rows.iter().enumerate() {
        writeln!(s, "{},{},{}", i + 1, r.speaker_id, opt_percent(r.improvement)).unwrap();
    }
    s
}

pub fn ablation_csv(rows: &[AblationRow], hash: &str) -> String {
    let mut s = format!("# config_hash={hash}\nspeaker_id,removed_augmentation_percent,removed_transfer_percent\n");
    for r in rows {
        writeln!(s, "{},{},{}", r.speaker_id, opt_percent(r.removed_augmentation), opt_percent(r.removed_transfer)).unwrap();
    }
    s
}

pub fn frame_accuracy_csv(rows: &[FrameAccuracy], hash: &str) -> String {
    let mut s = format!("# config_hash={hash}\nsetup,correct_frames,frames,accuracy\n");
    for r in rows {
        writeln!(s, "{},{},{},{:.6}", r.setup.tag(), r.correct_frames, r.frames, r.accuracy).unwrap();
    }
    s
}

/// Writes every report file of `outcome` into `dir`.
pub fn write_reports(outcome: &LosoOutcome, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let h = outcome.config_hash.as_str();
    write_text(&dir.join("wer.csv"), &report_csv(&outcome.reports, Some(h)))?;
    let wer_json = serde_json::json!({ "config_hash": h, "reports": outcome.reports });
    write_text(&dir.join("wer.json"), &(serde_json::to_string_pretty(&wer_json).expect("serializes") + "\n"))?;
    write_text(&dir.join("boxplot.dat"), &format!("# config_hash={h}\n{}", boxplot_gnuplot(&outcome.reports)))?;
    write_text(&dir.join("relative_improvement.csv"), &relative_csv(&outcome.relative, h))?;
    write_text(&dir.join("ablation.csv"), &ablation_csv(&outcome.ablation, h))?;
    write_text(&dir.join("frame_accuracy.csv"), &frame_accuracy_csv(&outcome.frame_accuracy, h))?;
    let summary = serde_json::json!({
        "config_hash": h,
        "reports": outcome.reports,
        "relative_improvement": outcome.relative,
        "ablation": outcome.ablation,
        "frame_accuracy": outcome.frame_accuracy,
    });
    write_text(&dir.join("summary.json"), &(serde_json::to_string_pretty(&summary).expect("serializes") + "\n"))
}

/// Full leave-one-speaker-out run; see the module docs for the layout.
/// Folds run in parallel on the current rayon pool.
pub fn run_loso(cfg: &ExperimentConfig, opts: &LosoOptions) -> Result<LosoOutcome> {
    cfg.validate()?;
    let hash = cfg.hash();
    claim_workdir(&cfg.paths.workdir, &hash)?;
    let symbols = match &cfg.paths.symbols {
        Some(p) => SymbolTable::read(p)?,
        None => SymbolTable::synthetic(cfg.model.num_outputs),
    };
    if symbols.len() != cfg.model.num_outputs {
        return Err(Error::config(format!(
            "{} symbols for {} model outputs",
            symbols.len(),
            cfg.model.num_outputs
        )));
    }
    let target = Manifest::read_jsonl(&cfg.paths.target_manifest)?;
    let target_ali = read_alignments(&cfg.paths.target_alignments)?;
    let plan = loso_folds(&target)?;

    let (baseline, stage1) = source_models(cfg, &hash)?;
    let pipeline = FeaturePipeline::default();
    let train = prepare_examples(&target, &target_ali, &pipeline, &cfg.speed_factors)?;
    let eval = prepare_examples(&target, &target_ali, &pipeline, &[1.0])?;
    let ctx = FoldContext {
        cfg,
        hash: &hash,
        baseline: &baseline,
        stage1: &stage1,
        train: &train,
        eval: &eval,
        symbols: &symbols,
    };
    let n = opts.fold_limit.unwrap_or(plan.folds.len()).min(plan.folds.len());
    let folds = plan.folds[..n]
        .par_iter()
        .enumerate()
        .map(|(i, f)| run_fold(&ctx, i, f))
        .collect::<Result<Vec<_>>>()?;
    let outcome = summarize(&folds, &target, &cfg.scoring, &hash)?;
    write_reports(&outcome, &cfg.paths.workdir.join("reports"))?;
    Ok(outcome)
}

/// Rebuilds the reports from whatever folds of `cfg` have finished.
pub fn report_finished(cfg: &ExperimentConfig) -> Result<LosoOutcome> {
    cfg.validate()?;
    let hash = cfg.hash();
    let target = Manifest::read_jsonl(&cfg.paths.target_manifest)?;
    let plan = loso_folds(&target)?;
    let mut folds = Vec::new();
    for (i, f) in plan.folds.iter().enumerate() {
        let dir = fold_dir(cfg, i, f);
        if is_done(&dir, &hash)? {
            folds.push(read_fold(&dir)?);
        }
    }
    if folds.is_empty() {
        return Err(Error::data(format!("no finished folds under {}", cfg.paths.workdir.display())));
    }
    let outcome = summarize(&folds, &target, &cfg.scoring, &hash)?;
    write_reports(&outcome, &cfg.paths.workdir.join("reports"))?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paths() -> ExperimentPaths {
        ExperimentPaths {
            source_manifest: "src/manifest.jsonl".into(),
            source_alignments: "src/alignments.jsonl".into(),
            target_manifest: "tgt/manifest.jsonl".into(),
            target_alignments: "tgt/alignments.jsonl".into(),
            rir_dir: "rirs".into(),
            noise_dir: "noises".into(),
            symbols: None,
            workdir: "work".into(),
        }
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let cfg = ExperimentConfig::desk(paths(), 12);
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        let mut v: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
        v["stage1"]["momentum"] = 0.9.into();
        let err = ExperimentConfig::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn hash_ignores_workdir_only() {
        let a = ExperimentConfig::desk(paths(), 12);
        let mut b = a.clone();
        b.paths.workdir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 7;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp.json");
        std::fs::write(&p, ExperimentConfig::desk(paths(), 12).to_json()).unwrap();
        let cfg = ExperimentConfig::load(&p).unwrap();
        assert_eq!(cfg.paths.rir_dir, dir.path().join("rirs"));
        assert_eq!(cfg.paths.workdir, dir.path().join("work"));
    }

    #[test]
    fn swapped_stage_tags_rejected() {
        let mut cfg = ExperimentConfig::desk(paths(), 12);
        cfg.stage1.stage = Stage::Stage2;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn schema_lists_every_field() {
        let schema: serde_json::Value = serde_json::from_str(EXPERIMENT_SCHEMA).unwrap();
        let cfg: serde_json::Value = serde_json::to_value(ExperimentConfig::desk(paths(), 12)).unwrap();
        let keys = |v: &serde_json::Value| v.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
        assert_eq!(keys(&schema["properties"]), keys(&cfg));
        assert_eq!(keys(&schema["properties"]["paths"]["properties"]), keys(&cfg["paths"]));
        assert_eq!(schema["additionalProperties"], false);
    }

    #[test]
    fn markers_refuse_foreign_hash() {
        let dir = tempfile::tempdir().unwrap();
        assert!(!is_done(dir.path(), "abc").unwrap());
        write_text(&dir.path().join(DONE), "abc\n").unwrap();
        assert!(is_done(dir.path(), "abc").unwrap());
        assert!(matches!(is_done(dir.path(), "xyz"), Err(Error::Config(_))));
        claim_workdir(dir.path(), "abc").unwrap();
        claim_workdir(dir.path(), "abc").unwrap();
        assert!(matches!(claim_workdir(dir.path(), "xyz"), Err(Error::Config(_))));
    }

    fn fold(spk: &str, wers: [(usize, usize); 4]) -> FoldResult {
        // each setup: (errors via hypothesis length mismatch, frames)
        FoldResult {
            config_hash: "h".into(),
            held_out_speaker: spk.into(),
            setups: Setup::ALL
                .iter()
                .zip(wers)
                .map(|(&setup, (deleted, correct))| SetupResult {
                    setup,
                    correct_frames: correct,
                    frames: 10,
                    hypotheses: vec![Hypothesis {
                        utt_id: format!("{spk}-u"),
                        words: ["a", "b", "c", "d"][deleted..].iter().map(|w| w.to_string()).collect(),
                    }],
                })
                .collect(),
        }
    }

    #[test]
    fn summary_tables() {
        use crate::manifest::Utterance;
        let utt = |spk: &str| Utterance {
            utt_id: format!("{spk}-u"),
            speaker_id: spk.into(),
            audio_path: "x.wav".into(),
            transcript: ["a", "b", "c", "d"].iter().map(|w| w.to_string()).collect(),
            condition_tag: "target".into(),
            duration_s: 1.0,
        };
        let target = Manifest::new(vec![utt("A"), utt("B")]).unwrap();
        // deletions per setup [baseline, stage1_only, stage2_only, two_staged]
        let folds = [fold("A", [(4, 1), (2, 5), (3, 4), (1, 7)]), fold("B", [(2, 2), (2, 6), (2, 5), (2, 8)])];
        let out = summarize(&folds, &target, &ScoringOptions::default(), "h").unwrap();
        assert_eq!(out.report(Setup::Baseline).aggregate, 6.0 / 8.0);
        assert_eq!(out.report(Setup::TwoStaged).aggregate, 3.0 / 8.0);
        assert_eq!(out.frame_accuracy(Setup::TwoStaged), 15.0 / 20.0);
        // B: 0 % improvement, A: 75 %
        assert_eq!(out.relative.iter().map(|r| r.speaker_id.as_str()).collect::<Vec<_>>(), ["B", "A"]);
        assert_eq!(out.relative[1].improvement, Some(75.0));
        let a = &out.ablation[1];
        assert_eq!(a.speaker_id, "A");
        assert_eq!(a.removed_augmentation, Some(-200.0));
        assert_eq!(a.removed_transfer, Some(-100.0));
        let csv = relative_csv(&out.relative, "h");
        assert!(csv.starts_with("# config_hash=h\n"));
        assert!(csv.contains("2,A,75.000000"));
    }
}
