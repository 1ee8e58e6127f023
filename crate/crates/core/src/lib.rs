//! Unit processing and evaluation toolkit for spoken language modeling.
//!
//! The crate covers the whole loop around discrete speech units:
//!
//! - [`corpus`]: on-disk formats (frame matrices, unit files, manifests,
//!   ABX item files, pair files, transcripts).
//! - [`quantizer`]: k-means codebooks, frame encoding, run-length dedup and
//!   bitrate.
//! - [`abx`]: within/across-speaker ABX error over DTW-aligned frames.
//! - [`lm`]: n-gram unit language model with temperature sampling and
//!   pair-based probes (spot-the-word, acceptability).
//! - [`gen`]: auto-BLEU, self-BLEU, VERT, perplexity sweeps, oracle anchors,
//!   AUC and continuation-based temperature selection.
//! - [`transcript`]: PER/CER/WER from edit-distance alignments.
//! - [`synth`]: synthetic corpora with known ground truth.

pub mod abx;
pub mod corpus;
mod error;
pub mod gen;
pub mod lm;
pub mod quantizer;
pub mod rng;
pub mod synth;
pub mod transcript;

pub use error::{Error, FormatError, Result};
