use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditOp {
    Correct,
    Substitution,
    Deletion,
    Insertion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub correct: usize,
    pub ref_len: usize,
    /// Operations from the start of both sequences to the end.
    pub ops: Vec<EditOp>,
}

impl AlignmentResult {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Optional text normalization applied before alignment; off by default.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringOptions {
    #[serde(default)]
    pub lowercase: bool,
}

impl ScoringOptions {
    pub fn normalize<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        words
            .into_iter()
            .map(str::trim)
            .filter(|w| !w.is_empty())
            .map(|w| if self.lowercase { w.to_lowercase() } else { w.to_string() })
            .collect()
    }
}

/// Levenshtein alignment with unit costs. Among minimal-cost alignments the
/// one with the most substitutions wins, which keeps the counts symmetric
/// under swapping the two sides; the backtrace then prefers correct, then
/// substitution, deletion, insertion.
pub fn align_words<S: AsRef<str>, T: AsRef<str>>(reference: &[S], hypothesis: &[T]) -> AlignmentResult {
    let r: Vec<&str> = reference.iter().map(|w| w.as_ref().trim()).collect();
    let h: Vec<&str> = hypothesis.iter().map(|w| w.as_ref().trim()).collect();
    let (n, m) = (r.len(), h.len());
    // key = cost * unit - substitutions, so minimizing it is lexicographic
    let unit = n + m + 1;
    let (sub, indel) = (unit - 1, unit);
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i * indel;
    }
    for j in 0..=m {
        d[j] = j * indel;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + if r[i - 1] == h[j - 1] { 0 } else { sub };
            d[i * w + j] = diag.min(d[(i - 1) * w + j] + indel).min(d[i * w + j - 1] + indel);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 && r[i - 1] == h[j - 1] && d[(i - 1) * w + j - 1] == here {
            ops.push(EditOp::Correct);
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && r[i - 1] != h[j - 1] && d[(i - 1) * w + j - 1] + sub == here {
            ops.push(EditOp::Substitution);
            i -= 1;
            j -= 1;
        } else if i > 0 && d[(i - 1) * w + j] + indel == here {
            ops.push(EditOp::Deletion);
            i -= 1;
        } else {
            ops.push(EditOp::Insertion);
            j -= 1;
        }
    }
    ops.reverse();
    let count = |op| ops.iter().filter(|&&o| o == op).count();
    AlignmentResult {
        substitutions: count(EditOp::Substitution),
        deletions: count(EditOp::Deletion),
        insertions: count(EditOp::Insertion),
        correct: count(EditOp::Correct),
        ref_len: n,
        ops,
    }
}

/// `(S + D + I) / N`.
pub fn wer(a: &AlignmentResult) -> Result<f64> {
    if a.ref_len == 0 {
        return Err(Error::UndefinedReference);
    }
    Ok(a.errors() as f64 / a.ref_len as f64)
}

/// Word-count weighted mean of per-speaker WERs, equal to pooled errors over
/// pooled reference words.
pub fn weighted_average_wer(per_speaker: &[(f64, usize)]) -> Result<f64> {
    let words: usize = per_speaker.iter().map(|p| p.1).sum();
    if words == 0 {
        return Err(Error::UndefinedReference);
    }
    Ok(per_speaker.iter().map(|&(w, n)| w * n as f64).sum::<f64>() / words as f64)
}

/// Relative WER reduction in percent; negative when the system is worse.
pub fn relative_improvement(baseline_wer: f64, system_wer: f64) -> Result<f64> {
    if baseline_wer <= 0.0 || !baseline_wer.is_finite() {
        return Err(Error::domain(format!("relative improvement needs a positive baseline, got {baseline_wer}")));
    }
    Ok(100.0 * (baseline_wer - system_wer) / baseline_wer)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: &str) -> Vec<&str> {
        x.split_whitespace().collect()
    }

    #[test]
    fn identity() {
        let a = align_words(&s("a b c d"), &s("a b c d"));
        assert_eq!((a.substitutions, a.deletions, a.insertions, a.correct), (0, 0, 0, 4));
        assert_eq!(wer(&a).unwrap(), 0.0);
    }

    #[test]
    fn one_substitution() {
        let a = align_words(&s("a b c"), &s("a x c"));
        assert_eq!((a.substitutions, a.deletions, a.insertions), (1, 0, 0));
        assert!((wer(&a).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_sides() {
        let a = align_words(&s("a"), &s(""));
        assert_eq!(a.deletions, 1);
        let b = align_words(&s("a b c d"), &s(""));
        assert_eq!(wer(&b).unwrap(), 1.0);
        let c = align_words(&s(""), &s("x y"));
        assert_eq!(c.insertions, 2);
        assert!(matches!(wer(&c), Err(Error::UndefinedReference)));
    }

    #[test]
    fn tie_break_prefers_substitution_over_indel() {
        // "a b" -> "b c" costs 2 either as S+S or as D+I
        let a = align_words(&s("a b"), &s("b c"));
        assert_eq!(a.ops, vec![EditOp::Substitution, EditOp::Substitution]);
    }

    #[test]
    fn case_sensitive_after_trim() {
        let a = align_words(&[" Haus "], &["haus"]);
        assert_eq!(a.substitutions, 1);
        let b = align_words(&[" Haus "], &["Haus"]);
        assert_eq!(b.correct, 1);
        let opts = ScoringOptions { lowercase: true };
        assert_eq!(opts.normalize([" Haus ", "", "X"]), vec!["haus", "x"]);
    }

    #[test]
    fn aggregation() {
        assert!((weighted_average_wer(&[(0.2, 7), (0.4, 7)]).unwrap() - 0.3).abs() < 1e-15);
        assert!((weighted_average_wer(&[(0.10, 100), (0.50, 300)]).unwrap() - 0.40).abs() < 1e-15);
        assert_eq!(weighted_average_wer(&[(0.25, 3)]).unwrap(), 0.25);
        assert!(weighted_average_wer(&[]).is_err());
        let r = relative_improvement(31.6, 25.5).unwrap();
        assert_eq!(format!("{r:.1}"), "19.3");
        assert_eq!(relative_improvement(20.0, 20.0).unwrap(), 0.0);
        assert!((relative_improvement(20.0, 22.0).unwrap() + 10.0).abs() < 1e-12);
    }
}
