//! Evaluation of generated unit corpora.

mod bleu;
mod curve;
mod sweep;

pub use bleu::{auto_bleu, auto_bleu_k, mean_auto_bleu, self_bleu, sentence_bleu, vert, VertReport};
pub use curve::{
    auc_between_anchors, find_anchors, Anchors, OraclePoint, SweepCurve, SweepPoint, CURVE_HEADER,
};
pub use sweep::{
    corpus_perplexity, select_continuation_temperature, temperature_sweep, validate_grid, ContinuationReport,
    SampleSource, SweepParams, DEFAULT_GRID,
};
