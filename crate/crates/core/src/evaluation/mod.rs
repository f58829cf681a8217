//! Word error rate scoring, leave-one-speaker-out fold planning and the
//! aggregate statistics reported over folds.

mod decode;
mod folds;
mod report;
mod scoring;
mod stats;

pub use decode::{greedy_decode, SymbolTable};
pub use folds::{loso_folds, Fold, FoldPlan};
pub use report::{
    boxplot_gnuplot, build_report, report_csv, score_by_speaker, write_boxplot_gnuplot, write_report_csv,
    write_report_json, Hypothesis, SpeakerWer, WerReport,
};
pub use scoring::{align_words, relative_improvement, weighted_average_wer, wer, AlignmentResult, EditOp, ScoringOptions};
pub use stats::{boxplot_stats, quantile, BoxplotStats};
