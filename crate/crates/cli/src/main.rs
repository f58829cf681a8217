use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use amadapt::acoustic_model::{read_checkpoint, write_checkpoint, ModelConfig, DESK_NUM_OUTPUTS};
use amadapt::alignment::read_alignments;
use amadapt::audio::{read_wav, CORPUS_RATE_HZ};
use amadapt::augment::{build_multicondition, load_noise_pool, load_rir_database, AugmentationSpec};
use amadapt::evaluation::{
    build_report, score_by_speaker, write_boxplot_gnuplot, write_report_csv, write_report_json, Hypothesis, ScoringOptions,
};
use amadapt::experiment::{run_loso, report_finished, ExperimentConfig, ExperimentPaths, LosoOptions, LosoOutcome};
use amadapt::features::{write_feature_archive, FeaturePipeline};
use amadapt::manifest::{read_jsonl, Manifest};
use amadapt::synth::{synth_corpus, BenchmarkConfig, MismatchBenchmark, SynthConfig};
use amadapt::trainer::{
    default_speed_factors, init_for_data, prepare_examples, train_stage, transfer_init, write_metrics_csv, Setup, Stage,
    StageConfig,
};
use amadapt::{Error, Result};

#[derive(Parser)]
#[command(name = "amadapt", version, about = "Two-stage acoustic model adaptation toolkit")]
struct Cli {
    /// Global seed; overrides the config file's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the clean + reverb + reverb-and-noise training corpus.
    Augment(AugmentArgs),
    /// Extract 300-dim network inputs into a feature archive.
    Features(FeaturesArgs),
    /// Train a model (stage 1 from scratch, stage 2 from --init).
    Train(TrainArgs),
    /// Copy a trained model into a fresh stage-2 checkpoint.
    Transfer(TransferArgs),
    /// Leave-one-speaker-out evaluation of all four setups.
    Loso(LosoArgs),
    /// Score hypotheses against a manifest.
    Score(ScoreArgs),
    /// Rebuild the LOSO reports from finished folds.
    Report,
    /// Generate a synthetic corpus or the full mismatch benchmark.
    SynthCorpus(SynthArgs),
    /// Print the experiment config JSON schema.
    Schema,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    rir_dir: PathBuf,
    #[arg(long)]
    noise_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    alignments: PathBuf,
    #[arg(long, value_parser = parse_stage, default_value = "stage1")]
    stage: Stage,
    /// Source checkpoint (required for stage 2).
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Step metrics CSV.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Output classes when no config is given.
    #[arg(long, default_value_t = DESK_NUM_OUTPUTS)]
    num_outputs: usize,
    /// Train only on utterances tagged `clean`.
    #[arg(long)]
    clean_only: bool,
}

#[derive(Args)]
struct TransferArgs {
    #[arg(long)]
    from: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LosoArgs {
    /// Stop after this many folds; rerun with a larger value to resume.
    #[arg(long)]
    fold_limit: Option<usize>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// JSONL with `{"utt_id", "words"}` records.
    #[arg(long)]
    hyps: PathBuf,
    #[arg(long, default_value = "system")]
    setup: String,
    #[arg(long)]
    lowercase: bool,
    /// Directory for report.csv, report.json and boxplot.dat.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Write the source/target mismatch benchmark plus `experiment.json`.
    #[arg(long)]
    benchmark: bool,
    #[arg(long, default_value_t = 35)]
    speakers: usize,
    #[arg(long, default_value_t = 68)]
    utts: usize,
    #[arg(long, default_value_t = DESK_NUM_OUTPUTS)]
    classes: usize,
}

fn parse_stage(s: &str) -> std::result::Result<Stage, String> {
    match s {
        "stage1" => Ok(Stage::Stage1),
        "stage2" => Ok(Stage::Stage2),
        _ => Err(format!("unknown stage {s:?} (stage1 or stage2)")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<Option<ExperimentConfig>> {
    let Some(path) = &cli.config else { return Ok(None) };
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(Some(cfg))
}

fn require_config(cli: &Cli) -> Result<ExperimentConfig> {
    load_config(cli)?.ok_or_else(|| Error::Config("this command needs --config".into()))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Augment(a) => augment(cli, a),
        Command::Features(a) => features(a),
        Command::Train(a) => train(cli, a),
        Command::Transfer(a) => transfer(cli, a),
        Command::Loso(a) => {
            let cfg = require_config(cli)?;
            let out = run_loso(&cfg, &LosoOptions { fold_limit: a.fold_limit })?;
            print_outcome(&out, &cfg.paths.workdir.join("reports"));
            Ok(())
        }
        Command::Score(a) => score(a),
        Command::Report => {
            let cfg = require_config(cli)?;
            let out = report_finished(&cfg)?;
            print_outcome(&out, &cfg.paths.workdir.join("reports"));
            Ok(())
        }
        Command::SynthCorpus(a) => synth(cli, a),
        Command::Schema => {
            print!("{}", amadapt::experiment::EXPERIMENT_SCHEMA);
            Ok(())
        }
    }
}

fn augment(cli: &Cli, a: &AugmentArgs) -> Result<()> {
    let cfg = load_config(cli)?;
    let spec = cfg.as_ref().map_or_else(AugmentationSpec::default, |c| c.augmentation.clone());
    let seed = cli.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
    let manifest = Manifest::read_jsonl(&a.manifest)?;
    let rooms = load_rir_database(&a.rir_dir, CORPUS_RATE_HZ)?;
    let noises = load_noise_pool(&a.noise_dir, CORPUS_RATE_HZ)?;
    let multi = build_multicondition(&manifest, &rooms, &noises, &spec, seed, &a.out)?;
    println!(
        "{} utterances -> {} ({:.1} h -> {:.1} h) in {}",
        manifest.len(),
        multi.manifest.len(),
        manifest.total_duration_s() / 3600.0,
        multi.manifest.total_duration_s() / 3600.0,
        a.out.display()
    );
    Ok(())
}

fn features(a: &FeaturesArgs) -> Result<()> {
    let manifest = Manifest::read_jsonl(&a.manifest)?;
    let pipeline = FeaturePipeline::default();
    let feats: Vec<(String, ndarray::Array2<f64>)> = manifest
        .utterances
        .par_iter()
        .map(|u| Ok((u.utt_id.clone(), pipeline.extract(&read_wav(manifest.audio_file(u))?, &u.utt_id)?)))
        .collect::<Result<_>>()?;
    let index = write_feature_archive(&a.out, feats.iter().map(|(id, m)| (id.as_str(), m)))?;
    let frames: usize = index.iter().map(|e| e.frames).sum();
    println!("{} utterances, {frames} frames -> {}", index.len(), a.out.display());
    Ok(())
}

fn stage_settings(cli: &Cli, cfg: Option<&ExperimentConfig>, stage: Stage) -> (StageConfig, Vec<f64>) {
    let mut sc = match (cfg, stage) {
        (Some(c), Stage::Stage1) => c.stage1.clone(),
        (Some(c), Stage::Stage2) => c.stage2.clone(),
        (None, Stage::Stage1) => StageConfig::stage1(),
        (None, Stage::Stage2) => StageConfig::stage2(),
    };
    if let Some(s) = cli.seed {
        sc.seed = s;
    }
    (sc, cfg.map_or_else(default_speed_factors, |c| c.speed_factors.clone()))
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let cfg = load_config(cli)?;
    let model_cfg = cfg.as_ref().map_or_else(|| ModelConfig::desk(a.num_outputs), |c| c.model.clone());
    let (stage_cfg, speeds) = stage_settings(cli, cfg.as_ref(), a.stage);
    let mut manifest = Manifest::read_jsonl(&a.manifest)?;
    if a.clean_only {
        manifest.utterances.retain(|u| u.condition_tag == "clean");
    }
    let alignments = read_alignments(&a.alignments)?;
    let data = prepare_examples(&manifest, &alignments, &FeaturePipeline::default(), &speeds)?;
    let init = match (a.stage, &a.init) {
        (_, Some(p)) => transfer_init(&read_checkpoint(p)?, &model_cfg)?,
        (Stage::Stage1, None) => {
            let seed = cli.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
            init_for_data(&model_cfg, seed, &data)?
        }
        (Stage::Stage2, None) => return Err(Error::Config("stage 2 needs --init <checkpoint>".into())),
    };
    let out = train_stage(&init, &data, &stage_cfg)?;
    let mut ck = out.checkpoint;
    if let Some(c) = &cfg {
        ck.meta.config_hash = c.hash();
    }
    write_checkpoint(&ck, &a.out)?;
    if let Some(m) = &a.metrics {
        write_metrics_csv(&out.steps, m)?;
    }
    for e in &out.epochs {
        println!("epoch {} loss {:.4} frame_acc {:.4} frames {}", e.epoch, e.loss, e.frame_acc, e.frames);
    }
    println!("{} examples -> {}", data.len(), a.out.display());
    Ok(())
}

fn transfer(cli: &Cli, a: &TransferArgs) -> Result<()> {
    let src = read_checkpoint(&a.from)?;
    let target_cfg = load_config(cli)?.map_or_else(|| src.model.config.clone(), |c| c.model);
    let ck = transfer_init(&src, &target_cfg)?;
    write_checkpoint(&ck, &a.out)?;
    println!("{} parameters transferred -> {}", ck.model.num_parameters(), a.out.display());
    Ok(())
}

fn score(a: &ScoreArgs) -> Result<()> {
    let manifest = Manifest::read_jsonl(&a.manifest)?;
    let hyps: Vec<Hypothesis> = read_jsonl(&a.hyps)?;
    let hyps: BTreeMap<String, Vec<String>> = hyps.into_iter().map(|h| (h.utt_id, h.words)).collect();
    let opts = ScoringOptions { lowercase: a.lowercase };
    let report = build_report(&a.setup, score_by_speaker(&manifest, &hyps, &opts)?)?;
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        let reports = std::slice::from_ref(&report);
        write_report_csv(reports, None, &dir.join("report.csv"))?;
        write_report_json(reports, None, &dir.join("report.json"))?;
        write_boxplot_gnuplot(reports, &dir.join("boxplot.dat"))?;
    }
    for s in &report.per_speaker {
        println!("{} {:.4} ({}/{})", s.speaker_id, s.wer, s.errors, s.word_count);
    }
    println!("weighted WER {:.4}", report.aggregate);
    Ok(())
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let seed = cli.seed.unwrap_or(1);
    if a.benchmark {
        let bcfg = BenchmarkConfig {
            seed,
            ..BenchmarkConfig::default()
        };
        let p = MismatchBenchmark::generate(&bcfg)?.write(&a.out)?;
        let rel = |q: &Path| q.strip_prefix(&a.out).unwrap_or(q).to_path_buf();
        let paths = ExperimentPaths {
            source_manifest: rel(&p.source_manifest),
            source_alignments: rel(&p.source_alignments),
            target_manifest: rel(&p.target_manifest),
            target_alignments: rel(&p.target_alignments),
            rir_dir: rel(&p.rir_dir),
            noise_dir: rel(&p.noise_dir),
            symbols: Some(rel(&p.symbols)),
            workdir: "work".into(),
        };
        let mut cfg = ExperimentConfig::desk(paths, bcfg.phone_classes);
        cfg.seed = seed;
        let cfg_path = a.out.join("experiment.json");
        std::fs::write(&cfg_path, cfg.to_json()).map_err(|e| Error::Io {
            path: cfg_path.clone(),
            source: e,
        })?;
        println!("benchmark written to {}; run with --config {}", a.out.display(), cfg_path.display());
        return Ok(());
    }
    let corpus = synth_corpus(&SynthConfig::new(a.speakers, a.utts, a.classes, seed))?;
    let m = corpus.write(&a.out)?;
    println!("{} utterances from {} speakers -> {}", m.len(), m.speakers().len(), a.out.display());
    Ok(())
}

fn print_outcome(out: &LosoOutcome, dir: &Path) {
    println!("config {}", out.config_hash);
    println!("{:<12} {:>8} {:>10}", "setup", "WER", "frame_acc");
    for &s in &Setup::ALL {
        println!("{:<12} {:>8.4} {:>10.4}", s.tag(), out.report(s).aggregate, out.frame_accuracy(s));
    }
    println!("reports in {}", dir.display());
}
