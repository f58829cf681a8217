use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scoring::{align_words, weighted_average_wer, ScoringOptions};
use super::stats::{boxplot_stats, BoxplotStats};
use crate::error::{Error, Result};
use crate::manifest::Manifest;

/// One line of a hypothesis file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hypothesis {
    pub utt_id: String,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerWer {
    pub speaker_id: String,
    pub wer: f64,
    pub word_count: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WerReport {
    pub setup: String,
    pub per_speaker: Vec<SpeakerWer>,
    /// Word-count weighted mean WER.
    pub aggregate: f64,
    pub boxplot: BoxplotStats,
}

/// Scores every utterance of `manifest` against `hyps` and pools the
/// counts per speaker (ordered by speaker id).
pub fn score_by_speaker(
    manifest: &Manifest,
    hyps: &BTreeMap<String, Vec<String>>,
    opts: &ScoringOptions,
) -> Result<Vec<SpeakerWer>> {
    let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for u in manifest.iter() {
        let hyp = hyps
            .get(&u.utt_id)
            .ok_or_else(|| Error::data(format!("no hypothesis for {}", u.utt_id)))?;
        let r = opts.normalize(u.transcript.iter().map(String::as_str));
        let h = opts.normalize(hyp.iter().map(String::as_str));
        let a = align_words(&r, &h);
        let e = tally.entry(&u.speaker_id).or_default();
        e.0 += a.errors();
        e.1 += a.ref_len;
    }
    tally
        .into_iter()
        .map(|(spk, (errors, words))| {
            if words == 0 {
                return Err(Error::UndefinedReference);
            }
            Ok(SpeakerWer {
                speaker_id: spk.to_string(),
                wer: errors as f64 / words as f64,
                word_count: words,
                errors,
            })
        })
        .collect()
}

pub fn build_report(setup: &str, per_speaker: Vec<SpeakerWer>) -> Result<WerReport> {
    let pairs: Vec<(f64, usize)> = per_speaker.iter().map(|s| (s.wer, s.word_count)).collect();
    let aggregate = weighted_average_wer(&pairs)?;
    let wers: Vec<f64> = per_speaker.iter().map(|s| s.wer).collect();
    Ok(WerReport {
        setup: setup.to_string(),
        boxplot: boxplot_stats(&wers)?,
        per_speaker,
        aggregate,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `setup,speaker_id,word_count,errors,wer`, preceded by a `# config_hash`
/// comment when a hash is given.
pub fn report_csv(reports: &[WerReport], config_hash: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(h) = config_hash {
        writeln!(s, "# config_hash={h}").unwrap();
    }
    s.push_str("setup,speaker_id,word_count,errors,wer\n");
    for r in reports {
        for p in &r.per_speaker {
            writeln!(s, "{},{},{},{},{:.6}", r.setup, p.speaker_id, p.word_count, p.errors, p.wer).unwrap();
        }
    }
    s
}

pub fn write_report_csv(reports: &[WerReport], config_hash: Option<&str>, path: &Path) -> Result<()> {
    write_text(path, &report_csv(reports, config_hash))
}

pub fn write_report_json(reports: &[WerReport], config_hash: Option<&str>, path: &Path) -> Result<()> {
    let doc = serde_json::json!({ "config_hash": config_hash, "reports": reports });
    write_text(path, &(serde_json::to_string_pretty(&doc).expect("report serializes") + "\n"))
}

/// Whisker/box columns for gnuplot's `candlesticks` style:
/// `index setup whisker_low q1 median q3 whisker_high`, then one
/// `index setup value` line per outlier in a second data block.
pub fn boxplot_gnuplot(reports: &[WerReport]) -> String {
    let mut s = String::from("# index setup whisker_low q1 median q3 whisker_high\n");
    for (i, r) in reports.iter().enumerate() {
        let b = &r.boxplot;
        writeln!(s, "{} {} {:.6} {:.6} {:.6} {:.6} {:.6}", i + 1, r.setup, b.whisker_low, b.q1, b.median, b.q3, b.whisker_high).unwrap();
    }
    s.push_str("\n\n# index setup outlier\n");
    for (i, r) in reports.iter().enumerate() {
        for o in &r.boxplot.outliers {
            writeln!(s, "{} {} {:.6}", i + 1, r.setup, o).unwrap();
        }
    }
    s
}

pub fn write_boxplot_gnuplot(reports: &[WerReport], path: &Path) -> Result<()> {
    write_text(path, &boxplot_gnuplot(reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::Utterance;

    fn utt(id: &str, spk: &str, words: &str) -> Utterance {
        Utterance {
            utt_id: id.into(),
            speaker_id: spk.into(),
            audio_path: format!("{id}.wav"),
            transcript: words.split_whitespace().map(String::from).collect(),
            condition_tag: "clean".into(),
            duration_s: 1.0,
        }
    }

    #[test]
    fn pooled_per_speaker() {
        let m = Manifest::new(vec![utt("a1", "A", "x y"), utt("a2", "A", "z"), utt("b1", "B", "p q r s")]).unwrap();
        let hyps: BTreeMap<String, Vec<String>> = [
            ("a1", vec!["x"]),
            ("a2", vec!["z", "z"]),
            ("b1", vec!["p", "q", "r", "s"]),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.into_iter().map(String::from).collect()))
        .collect();
        let per = score_by_speaker(&m, &hyps, &ScoringOptions::default()).unwrap();
        assert_eq!(per[0].errors, 2);
        assert_eq!(per[0].word_count, 3);
        assert_eq!(per[1].wer, 0.0);
        let rep = build_report("sys", per).unwrap();
        assert!((rep.aggregate - 2.0 / 7.0).abs() < 1e-15);
        let csv = report_csv(&[rep.clone()], Some("abc"));
        assert!(csv.starts_with("# config_hash=abc\nsetup,speaker_id"));
        assert!(boxplot_gnuplot(&[rep]).contains("1 sys"));

        let mut partial = hyps.clone();
        partial.remove("b1");
        assert!(matches!(score_by_speaker(&m, &partial, &ScoringOptions::default()), Err(Error::Data(_))));
    }
}
