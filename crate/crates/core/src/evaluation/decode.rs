use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::alignment::SILENCE_CLASS;
use crate::error::{Error, Result};

/// Maps output class ids to words; entry 0 is silence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolTable {
    pub words: Vec<String>,
}

impl SymbolTable {
    /// `<sil>`, `w01`, `w02`, ... for `n` classes.
    pub fn synthetic(n: usize) -> Self {
        let mut words = vec!["<sil>".to_string()];
        words.extend((1..n).map(|k| format!("w{k:02}")));
        SymbolTable { words }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, class: usize) -> &str {
        &self.words[class]
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("symbols serialize");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Per-frame argmax (lowest index on ties), collapse runs, drop silence,
/// look up words.
pub fn greedy_decode(log_posteriors: ArrayView2<f64>, symbols: &SymbolTable) -> Result<Vec<String>> {
    if log_posteriors.ncols() != symbols.len() {
        return Err(Error::domain(format!(
            "{} output classes but {} symbols",
            log_posteriors.ncols(),
            symbols.len()
        )));
    }
    let mut words = Vec::new();
    let mut prev = None;
    for row in log_posteriors.rows() {
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        if prev != Some(best) && best != SILENCE_CLASS {
            words.push(symbols.word(best).to_string());
        }
        prev = Some(best);
    }
    Ok(words)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn peaked(seq: &[usize], k: usize) -> Array2<f64> {
        Array2::from_shape_fn((seq.len(), k), |(t, c)| if c == seq[t] { 0.0 } else { -5.0 })
    }

    #[test]
    fn silence_only_is_empty() {
        let s = SymbolTable::synthetic(4);
        assert!(greedy_decode(peaked(&[0, 0, 0], 4).view(), &s).unwrap().is_empty());
    }

    #[test]
    fn collapse_rule() {
        let s = SymbolTable::synthetic(4);
        let out = greedy_decode(peaked(&[1, 1, 2, 2, 0, 3, 3], 4).view(), &s).unwrap();
        assert_eq!(out, vec!["w01", "w02", "w03"]);
        let rep = greedy_decode(peaked(&[1, 1, 0, 1], 4).view(), &s).unwrap();
        assert_eq!(rep, vec!["w01", "w01"]);
        assert!(greedy_decode(peaked(&[1], 4).view(), &SymbolTable::synthetic(3)).is_err());
    }
}
