//! The communication game and its statistics.

mod pipeline;
mod stats;

pub use pipeline::{
    curve_csv, format_table, k_sweep, play, score, train_layperson, ExplainedSplit, GameConfig,
    RunReport, SweepPoint,
};
pub use stats::{
    acc, agreement, csr, explanation_entropy, jaccard, word_overlap, Agreement, CommunicationRecord,
};
