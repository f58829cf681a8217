use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use amadapt::acoustic_model::{LayerSpec, ModelConfig};
use amadapt::experiment::{report_finished, run_loso, ExperimentConfig, ExperimentPaths, LosoOptions};
use amadapt::synth::{BenchmarkConfig, MismatchBenchmark};
use amadapt::trainer::Setup;

fn tiny_config(data: &Path, workdir: PathBuf) -> ExperimentConfig {
    let bench = BenchmarkConfig {
        source_speakers: 2,
        source_utts_per_speaker: 2,
        target_speakers: 3,
        target_utts_per_speaker: 2,
        ..BenchmarkConfig::default()
    };
    let p = MismatchBenchmark::generate(&bench).unwrap().write(data).unwrap();
    let mut cfg = ExperimentConfig::desk(
        ExperimentPaths {
            source_manifest: p.source_manifest,
            source_alignments: p.source_alignments,
            target_manifest: p.target_manifest,
            target_alignments: p.target_alignments,
            rir_dir: p.rir_dir,
            noise_dir: p.noise_dir,
            symbols: Some(p.symbols),
            workdir,
        },
        bench.phone_classes,
    );
    cfg.model = ModelConfig {
        input_dim: 300,
        layers: vec![LayerSpec::tdnn(&[-1, 0, 1], 8), LayerSpec::lstmp(8, 4), LayerSpec::tdnn(&[0], 8)],
        num_outputs: bench.phone_classes,
        scale_factor: 1.0,
    };
    cfg.stage1.epochs = 1;
    cfg.stage2.epochs = 1;
    cfg.speed_factors = vec![1.0];
    cfg
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect()
}

fn mtime(p: &Path) -> SystemTime {
    std::fs::metadata(p).unwrap().modified().unwrap()
}

fn fold_dirs(workdir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(workdir.join("folds"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    v.sort();
    v
}

#[test]
fn loso_reports_are_reproducible_and_resumable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(&tmp.path().join("data"), tmp.path().join("fresh"));
    let fresh = run_loso(&cfg, &LosoOptions::default()).unwrap();
    assert_eq!(fresh.folds.len(), 3);
    assert_eq!(fresh.reports.len(), Setup::ALL.len());
    for r in &fresh.reports {
        assert_eq!(r.per_speaker.len(), 3);
    }

    // partial run, then resume
    let mut resumed_cfg = cfg.clone();
    resumed_cfg.paths.workdir = tmp.path().join("resumed");
    let work = resumed_cfg.paths.workdir.clone();
    let partial = run_loso(&resumed_cfg, &LosoOptions { fold_limit: Some(1) }).unwrap();
    assert_eq!(partial.folds.len(), 1);
    assert_eq!(report_finished(&resumed_cfg).unwrap().folds.len(), 1);
    let first = &fold_dirs(&work)[0];
    let stamps: Vec<_> = ["two_staged.ckpt", "stage2_only.ckpt", "fold.json"]
        .iter()
        .map(|f| mtime(&first.join(f)))
        .chain([mtime(&work.join("stage1/stage1_only.ckpt"))])
        .collect();

    let resumed = run_loso(&resumed_cfg, &LosoOptions::default()).unwrap();
    assert_eq!(resumed.folds.len(), 3);
    let after: Vec<_> = ["two_staged.ckpt", "stage2_only.ckpt", "fold.json"]
        .iter()
        .map(|f| mtime(&first.join(f)))
        .chain([mtime(&work.join("stage1/stage1_only.ckpt"))])
        .collect();
    assert_eq!(stamps, after, "completed work was redone");

    let a = read_dir_bytes(&cfg.paths.workdir.join("reports"));
    let b = read_dir_bytes(&work.join("reports"));
    assert!(a.contains_key("wer.csv") && a.contains_key("relative_improvement.csv"));
    assert_eq!(a, b);
    let hash_line = format!("# config_hash={}", cfg.hash());
    assert!(String::from_utf8_lossy(&a["wer.csv"]).starts_with(&hash_line));
}

#[test]
fn foreign_config_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(&tmp.path().join("data"), tmp.path().join("work"));
    run_loso(&cfg, &LosoOptions { fold_limit: Some(1) }).unwrap();
    let mut other = cfg.clone();
    other.seed += 1;
    let err = run_loso(&other, &LosoOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
    assert!(matches!(err, amadapt::Error::Config(_)));
}
