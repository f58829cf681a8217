use std::path::Path;
use std::process::{Command, Output};

use amadapt::acoustic_model::read_checkpoint;
use amadapt::experiment::ExperimentConfig;
use amadapt::manifest::Manifest;

fn amadapt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amadapt"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn schema_is_json() {
    let o = amadapt(&["schema"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("\"additionalProperties\": false"));
    assert!(text.trim_start().starts_with('{') && text.trim_end().ends_with('}'));
}

#[test]
fn synth_train_transfer() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    let o = amadapt(&["synth-corpus", "--out", p(&corpus), "--speakers", "2", "--utts", "2", "--classes", "12", "--seed", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = Manifest::read_jsonl(corpus.join("manifest.jsonl")).unwrap();
    assert_eq!(m.len(), 4);
    assert_eq!(m.speakers().len(), 2);

    let model = tmp.path().join("s1.ckpt");
    let metrics = tmp.path().join("s1.csv");
    let o = amadapt(&[
        "train",
        "--manifest",
        p(&corpus.join("manifest.jsonl")),
        "--alignments",
        p(&corpus.join("alignments.jsonl")),
        "--num-outputs",
        "12",
        "--out",
        p(&model),
        "--metrics",
        p(&metrics),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("epoch 3"));
    let rows = std::fs::read_to_string(&metrics).unwrap().lines().count();
    assert!(rows > 1);

    let moved = tmp.path().join("s2-init.ckpt");
    let o = amadapt(&["transfer", "--from", p(&model), "--out", p(&moved)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_checkpoint(&model).unwrap().model, read_checkpoint(&moved).unwrap().model);

    let o = amadapt(&["train", "--stage", "stage2", "--manifest", p(&corpus.join("manifest.jsonl")), "--alignments",
        p(&corpus.join("alignments.jsonl")), "--num-outputs", "12", "--out", p(&tmp.path().join("x.ckpt"))]);
    assert_eq!(o.status.code(), Some(2), "stage 2 without --init");
}

#[test]
fn benchmark_and_augment() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = tmp.path().join("bench");
    let o = amadapt(&["synth-corpus", "--benchmark", "--out", p(&bench)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = ExperimentConfig::load(&bench.join("experiment.json")).unwrap();
    assert_eq!(cfg.paths.workdir, bench.join("work"));
    assert!(cfg.paths.source_manifest.exists());

    let out = tmp.path().join("mc");
    let o = amadapt(&[
        "augment",
        "--manifest",
        p(&cfg.paths.source_manifest),
        "--rir-dir",
        p(&cfg.paths.rir_dir),
        "--noise-dir",
        p(&cfg.paths.noise_dir),
        "--out",
        p(&out),
        "--jobs",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let source = Manifest::read_jsonl(&cfg.paths.source_manifest).unwrap();
    let multi = Manifest::read_jsonl(out.join("manifest.jsonl")).unwrap();
    assert_eq!(multi.len(), 3 * source.len());
    assert!(out.join("provenance.jsonl").exists());
}

#[test]
fn score_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tmp.path().join("m.jsonl");
    let hyps = tmp.path().join("h.jsonl");
    std::fs::write(
        &manifest,
        concat!(
            r#"{"utt_id":"a1","speaker_id":"A","audio_path":"a1.wav","transcript":["x","y","z"],"condition_tag":"clean","duration_s":1.0}"#,
            "\n",
            r#"{"utt_id":"b1","speaker_id":"B","audio_path":"b1.wav","transcript":["x"],"condition_tag":"clean","duration_s":1.0}"#,
            "\n"
        ),
    )
    .unwrap();
    std::fs::write(&hyps, "{\"utt_id\":\"a1\",\"words\":[\"x\",\"z\"]}\n{\"utt_id\":\"b1\",\"words\":[\"x\"]}\n").unwrap();
    let out = tmp.path().join("rep");
    let o = amadapt(&["score", "--manifest", p(&manifest), "--hyps", p(&hyps), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // one deletion over four reference words
    assert!(stdout(&o).contains("weighted WER 0.2500"), "{}", stdout(&o));
    for f in ["report.csv", "report.json", "boxplot.dat"] {
        assert!(out.join(f).exists(), "{f}");
    }

    std::fs::write(&hyps, "{\"utt_id\":\"a1\",\"words\":[\"x\"]}\n").unwrap();
    let o = amadapt(&["score", "--manifest", p(&manifest), "--hyps", p(&hyps)]);
    assert_eq!(o.status.code(), Some(3), "missing hypothesis is a data error");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(amadapt(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(amadapt(&["loso"]).status.code(), Some(2), "loso without --config");

    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, "{\"paths\": {}, \"surprise\": 1}").unwrap();
    assert_eq!(amadapt(&["--config", p(&cfg), "loso"]).status.code(), Some(2));

    let o = amadapt(&["score", "--manifest", p(&tmp.path().join("missing.jsonl")), "--hyps", p(&cfg)]);
    assert_eq!(o.status.code(), Some(3));
}
