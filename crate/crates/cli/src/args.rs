use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "unitlab", version, about = "Discrete speech unit processing and evaluation")]
pub struct Cli {
    /// TOML file with one table of flag defaults per subcommand, e.g.
    /// `[lm-train]` with `order = 3`. Flags given on the command line win.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for data-parallel steps (default: all cores).
    /// Results do not depend on this value.
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,

    /// Suppress informational messages on stderr.
    #[arg(long)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a k-means codebook on frame matrices
    QuantizeTrain(QuantizeTrainArgs),
    /// Encode frame matrices into unit sequences with a codebook
    QuantizeEncode(QuantizeEncodeArgs),
    /// Collapse runs of repeated units
    Dedup(DedupArgs),
    /// Bits per second of a unit corpus
    Bitrate(BitrateArgs),
    /// Within- or across-speaker ABX error
    Abx(AbxArgs),
    /// Train an n-gram unit language model
    LmTrain(LmTrainArgs),
    /// Per-utterance log-probability and perplexity
    LmScore(LmScoreArgs),
    /// Sample unit sequences at a temperature
    LmSample(LmSampleArgs),
    /// Pair preference accuracy (spot-the-word, acceptability)
    LmPairs(LmPairsArgs),
    /// Median perplexity and VERT across sampling temperatures
    GenSweep(GenSweepArgs),
    /// Oracle anchors and excess area of a sweep curve
    GenAuc(GenAucArgs),
    /// Select a sampling temperature from prompt continuations
    GenPickTemp(GenPickTempArgs),
    /// Phone, character or word error rate
    Er(ErArgs),
    /// Generate a synthetic corpus with known ground truth
    SynthMake(SynthMakeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::QuantizeTrain(_) => "quantize-train",
            Command::QuantizeEncode(_) => "quantize-encode",
            Command::Dedup(_) => "dedup",
            Command::Bitrate(_) => "bitrate",
            Command::Abx(_) => "abx",
            Command::LmTrain(_) => "lm-train",
            Command::LmScore(_) => "lm-score",
            Command::LmSample(_) => "lm-sample",
            Command::LmPairs(_) => "lm-pairs",
            Command::GenSweep(_) => "gen-sweep",
            Command::GenAuc(_) => "gen-auc",
            Command::GenPickTemp(_) => "gen-pick-temp",
            Command::Er(_) => "er",
            Command::SynthMake(_) => "synth-make",
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct QuantizeTrainArgs {
    /// Manifest listing the training frame files
    #[arg(long)]
    pub manifest: PathBuf,
    /// Number of centroids
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 300)]
    pub max_iter: usize,
    /// Stop when the relative inertia improvement falls below this
    #[arg(long, default_value_t = 1e-6)]
    pub rel_tol: f64,
    /// Output codebook file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct QuantizeEncodeArgs {
    #[arg(long)]
    pub codebook: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output unit file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct DedupArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct BitrateArgs {
    /// Frame-level unit file (one unit per frame)
    #[arg(long)]
    pub units: PathBuf,
    /// Manifest giving utterance durations
    #[arg(long, conflicts_with = "frame_period_ms", required_unless_present = "frame_period_ms")]
    pub manifest: Option<PathBuf>,
    /// Derive durations as sequence length times this period
    #[arg(long)]
    pub frame_period_ms: Option<f64>,
    /// Compute the entropy on raw rather than deduplicated units
    #[arg(long)]
    pub no_dedup: bool,
    /// Report file (default: stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct AbxArgs {
    #[arg(long)]
    pub items: PathBuf,
    /// Manifest listing the frame files the items refer to
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "within", value_parser = ["within", "across"])]
    pub mode: String,
    #[arg(long, default_value = "angular", value_parser = ["angular", "euclidean"])]
    pub metric: String,
    /// Cap on triples per cell; larger cells are subsampled
    #[arg(long, default_value_t = 5000)]
    pub max_triples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct LmTrainArgs {
    #[arg(long)]
    pub units: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub order: usize,
    #[arg(long, default_value = "absolute-discount", value_parser = ["absolute-discount", "add-k"])]
    pub smoothing: String,
    /// Discount for absolute discounting
    #[arg(long, default_value_t = 0.75)]
    pub discount: f64,
    /// Pseudo-count for add-k smoothing
    #[arg(long, default_value_t = 1.0)]
    pub add_k: f64,
    /// Train on raw rather than deduplicated units
    #[arg(long)]
    pub no_dedup: bool,
    /// Output model file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct LmScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub units: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct LmSampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Number of samples (ignored with --prompts: one per prompt)
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 200)]
    pub max_len: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Unit file of prompts to continue
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Output unit file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct LmPairsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value = "total", value_parser = ["total", "per-token"])]
    pub normalize: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct GenSweepArgs {
    /// Generator model to sample from
    #[arg(long, required_unless_present = "samples", conflicts_with = "samples")]
    pub model: Option<PathBuf>,
    /// Pre-generated samples as TEMPERATURE=UNIT_FILE, repeatable
    #[arg(long, value_name = "TAU=FILE")]
    pub samples: Vec<String>,
    /// Reference model used for perplexity
    #[arg(long)]
    pub reference: PathBuf,
    /// Comma-separated temperatures (default: 0.3..1.5 step 0.1, 1.7..2.5 step 0.2, 3.0)
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub samples_per_temp: usize,
    #[arg(long, default_value_t = 200)]
    pub max_len: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct GenAucArgs {
    /// Sweep TSV from gen-sweep
    #[arg(long)]
    pub curve: PathBuf,
    #[arg(long, requires = "oracle_vert", required_unless_present = "oracle_units")]
    pub oracle_ppx: Option<f64>,
    #[arg(long, requires = "oracle_ppx")]
    pub oracle_vert: Option<f64>,
    /// Compute the oracle point from real text instead (needs --reference)
    #[arg(long, conflicts_with_all = ["oracle_ppx", "oracle_vert"], requires = "reference")]
    pub oracle_units: Option<PathBuf>,
    /// Reference model for --oracle-units
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct GenPickTempArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Unit file of prompts
    #[arg(long)]
    pub prompts: PathBuf,
    /// Unit file of reference continuations, matched to prompts by id
    #[arg(long)]
    pub references: PathBuf,
    /// Comma-separated temperatures (default: the sweep grid)
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub n_continuations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ErArgs {
    #[arg(long, value_parser = ["phone", "char", "word"])]
    pub level: String,
    #[arg(long = "ref", value_name = "FILE")]
    pub reference: PathBuf,
    #[arg(long)]
    pub hyp: PathBuf,
    /// Lowercase and strip punctuation before scoring
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct SynthMakeArgs {
    /// TOML with optional `[corpus]` and `[lexicon]` tables
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of every generator
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}
