//! N-gram language model over unit sequences.
//!
//! Sequences are padded with `order - 1` BOS symbols and terminated by EOS.
//! Smoothing is either interpolated absolute discounting, recursing down to
//! a uniform distribution over the vocabulary plus EOS, or add-k at the
//! longest seen context. Units never seen in training are not part of the
//! vocabulary; they score at the smoothing floor.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_file, Pair, UnitSequence};
use crate::error::{Error, FormatError, Result};
use crate::rng;

pub const MODEL_MAGIC: &[u8; 4] = b"GSLM";
pub const MODEL_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Smoothing {
    AbsoluteDiscount { discount: f64 },
    AddK { k: f64 },
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::AbsoluteDiscount { discount: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NGramConfig {
    pub order: usize,
    pub smoothing: Smoothing,
    /// Collapse repeated adjacent units before training and scoring.
    pub dedup: bool,
}

impl Default for NGramConfig {
    fn default() -> Self {
        Self {
            order: 5,
            smoothing: Smoothing::default(),
            dedup: true,
        }
    }
}

/// A predicted symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Unit(u32),
    Eos,
}

#[derive(Debug, Clone, PartialEq)]
struct ContextCounts {
    total: u64,
    /// Sorted by dense id.
    next: Vec<(u32, u64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    config: NGramConfig,
    /// Sorted unit ids; dense id `i` is `vocab[i]`, EOS is `vocab.len()`.
    vocab: Vec<u32>,
    index: HashMap<u32, u32>,
    /// `tables[m]` maps a context of length `m` to its continuation counts.
    tables: Vec<HashMap<Vec<u32>, ContextCounts>>,
    training_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogProbReport {
    /// Natural-log probability of the whole sequence including EOS.
    pub total_logprob: f64,
    pub per_token: Vec<f64>,
    /// Units scored, excluding EOS.
    pub token_count: usize,
    /// `exp(-total / per_token.len())`, i.e. normalized over units plus EOS.
    pub perplexity: f64,
}

fn prep(units: &[u32], dedup: bool) -> Vec<u32> {
    let mut v = units.to_vec();
    if dedup {
        v.dedup();
    }
    v
}

impl NGramModel {
    pub fn train(corpus: &[UnitSequence], config: NGramConfig) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::InsufficientData("empty training corpus".into()));
        }
        if config.order == 0 {
            return Err(Error::invalid("order must be >= 1"));
        }
        match config.smoothing {
            Smoothing::AbsoluteDiscount { discount } if !(discount > 0.0 && discount < 1.0) => {
                return Err(Error::invalid(format!("discount {discount} outside (0, 1)")))
            }
            Smoothing::AddK { k } if !(k > 0.0 && k.is_finite()) => {
                return Err(Error::invalid(format!("add-k constant {k} must be positive")))
            }
            _ => {}
        }
        let seqs: Vec<Vec<u32>> = corpus.iter().map(|s| prep(&s.units, config.dedup)).collect();
        let mut vocab: Vec<u32> = seqs.iter().flatten().copied().collect();
        vocab.sort_unstable();
        vocab.dedup();
        if vocab.last() == Some(&u32::MAX) {
            return Err(Error::invalid("unit id u32::MAX is reserved"));
        }
        let index: HashMap<u32, u32> = vocab.iter().enumerate().map(|(i, &u)| (u, i as u32)).collect();
        let eos = vocab.len() as u32;
        let bos = eos + 1;

        let mut raw: Vec<HashMap<Vec<u32>, HashMap<u32, u64>>> = vec![HashMap::new(); config.order];
        let mut training_tokens = 0u64;
        for s in &seqs {
            let mut padded = vec![bos; config.order - 1];
            padded.extend(s.iter().map(|u| index[u]));
            padded.push(eos);
            for pos in config.order - 1..padded.len() {
                let tok = padded[pos];
                training_tokens += 1;
                for (m, table) in raw.iter_mut().enumerate() {
                    *table
                        .entry(padded[pos - m..pos].to_vec())
                        .or_default()
                        .entry(tok)
                        .or_default() += 1;
                }
            }
        }
        let tables = raw
            .into_iter()
            .map(|t| {
                t.into_iter()
                    .map(|(ctx, nexts)| {
                        let mut next: Vec<(u32, u64)> = nexts.into_iter().collect();
                        next.sort_unstable();
                        let total = next.iter().map(|(_, c)| c).sum();
                        (ctx, ContextCounts { total, next })
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            config,
            vocab,
            index,
            tables,
            training_tokens,
        })
    }

    pub fn config(&self) -> &NGramConfig {
        &self.config
    }

    pub fn order(&self) -> usize {
        self.config.order
    }

    /// Unit ids in distribution order; EOS follows them.
    pub fn vocab(&self) -> &[u32] {
        &self.vocab
    }

    /// Size of the predicted event space (units plus EOS).
    pub fn support_size(&self) -> usize {
        self.vocab.len() + 1
    }

    pub fn training_tokens(&self) -> u64 {
        self.training_tokens
    }

    fn eos(&self) -> u32 {
        self.vocab.len() as u32
    }

    fn bos(&self) -> u32 {
        self.vocab.len() as u32 + 1
    }

    fn oov(&self) -> u32 {
        self.vocab.len() as u32 + 2
    }

    fn dense(&self, unit: u32) -> u32 {
        self.index.get(&unit).copied().unwrap_or_else(|| self.oov())
    }

    pub fn token_at(&self, i: usize) -> Token {
        if i == self.vocab.len() {
            Token::Eos
        } else {
            Token::Unit(self.vocab[i])
        }
    }

    /// Dense context of length `order - 1` from a unit history.
    fn context(&self, history: &[u32]) -> Vec<u32> {
        let n = self.order() - 1;
        let mut ctx = vec![self.bos(); n.saturating_sub(history.len())];
        let start = history.len().saturating_sub(n);
        ctx.extend(history[start..].iter().map(|&u| self.dense(u)));
        ctx
    }

    fn lookup(&self, ctx: &[u32], m: usize) -> Option<&ContextCounts> {
        self.tables[m].get(&ctx[ctx.len() - m..])
    }

    fn prob_dense(&self, ctx: &[u32], w: u32) -> f64 {
        let mut p = 1.0 / self.support_size() as f64;
        for m in 0..self.order() {
            let Some(cc) = self.lookup(ctx, m) else {
                break;
            };
            let c = cc
                .next
                .binary_search_by_key(&w, |&(id, _)| id)
                .map_or(0, |i| cc.next[i].1) as f64;
            let total = cc.total as f64;
            p = match self.config.smoothing {
                Smoothing::AbsoluteDiscount { discount } => {
                    let gamma = discount * cc.next.len() as f64 / total;
                    (c - discount).max(0.0) / total + gamma * p
                }
                Smoothing::AddK { k } => (c + k) / (total + k * self.support_size() as f64),
            };
        }
        p
    }

    /// Full next-symbol distribution after `history` (units, not deduped),
    /// indexed like [`vocab`](Self::vocab) with EOS last.
    pub fn distribution(&self, history: &[u32]) -> Vec<f64> {
        self.distribution_dense(&self.context(history))
    }

    fn distribution_dense(&self, ctx: &[u32]) -> Vec<f64> {
        let v = self.support_size();
        let mut p = vec![1.0 / v as f64; v];
        for m in 0..self.order() {
            let Some(cc) = self.lookup(ctx, m) else {
                break;
            };
            let total = cc.total as f64;
            match self.config.smoothing {
                Smoothing::AbsoluteDiscount { discount } => {
                    let gamma = discount * cc.next.len() as f64 / total;
                    p.iter_mut().for_each(|x| *x *= gamma);
                    for &(id, c) in &cc.next {
                        p[id as usize] += (c as f64 - discount) / total;
                    }
                }
                Smoothing::AddK { k } => {
                    let denom = total + k * v as f64;
                    p.iter_mut().for_each(|x| *x = k / denom);
                    for &(id, c) in &cc.next {
                        p[id as usize] += c as f64 / denom;
                    }
                }
            }
        }
        p
    }

    /// Probability of `token` after `history`.
    pub fn prob(&self, history: &[u32], token: Token) -> f64 {
        let w = match token {
            Token::Unit(u) => self.dense(u),
            Token::Eos => self.eos(),
        };
        self.prob_dense(&self.context(history), w)
    }

    /// Chain-rule log probability of `units` followed by EOS.
    pub fn score(&self, units: &[u32], apply_dedup: bool) -> LogProbReport {
        let seq = prep(units, apply_dedup);
        let mut ctx = vec![self.bos(); self.order() - 1];
        let mut per_token = Vec::with_capacity(seq.len() + 1);
        for w in seq.iter().map(|&u| self.dense(u)).chain(std::iter::once(self.eos())) {
            per_token.push(self.prob_dense(&ctx, w).ln());
            if !ctx.is_empty() {
                ctx.remove(0);
                ctx.push(w);
            }
        }
        let total_logprob: f64 = per_token.iter().sum();
        LogProbReport {
            total_logprob,
            perplexity: (-total_logprob / per_token.len() as f64).exp(),
            token_count: seq.len(),
            per_token,
        }
    }

    /// Scores with the model's own dedup setting.
    pub fn score_default(&self, units: &[u32]) -> LogProbReport {
        self.score(units, self.config.dedup)
    }

    /// Draws the next symbol after `history` at temperature `tau`.
    pub fn next_token(&self, history: &[u32], tau: f64, rng: &mut rng::Rng) -> Token {
        let dist = self.distribution(history);
        self.token_at(draw(&temperature_scaled(&dist, tau), rng))
    }

    /// Samples a continuation, stopping at EOS or after `max_len` units.
    /// Prompt units are conditioned on but not returned.
    pub fn sample_with_rng(
        &self,
        tau: f64,
        max_len: usize,
        prompt: Option<&[u32]>,
        rng: &mut rng::Rng,
    ) -> Result<Vec<u32>> {
        self.generate(tau, max_len, prompt, |dist| draw(&temperature_scaled(dist, tau), rng))
    }

    pub fn sample(&self, tau: f64, max_len: usize, seed: u64, prompt: Option<&[u32]>) -> Result<Vec<u32>> {
        self.sample_with_rng(tau, max_len, prompt, &mut rng::seeded(seed))
    }

    /// Argmax decoding, the zero-temperature limit of sampling.
    pub fn greedy(&self, max_len: usize, prompt: Option<&[u32]>) -> Result<Vec<u32>> {
        self.generate(1.0, max_len, prompt, argmax)
    }

    fn generate(
        &self,
        tau: f64,
        max_len: usize,
        prompt: Option<&[u32]>,
        mut pick: impl FnMut(&[f64]) -> usize,
    ) -> Result<Vec<u32>> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid(format!("temperature {tau} must be positive")));
        }
        if max_len == 0 {
            return Err(Error::invalid("max_len must be >= 1"));
        }
        let prompt = prep(prompt.unwrap_or(&[]), self.config.dedup);
        let mut ctx = self.context(&prompt);
        let mut out = Vec::new();
        while out.len() < max_len {
            let i = pick(&self.distribution_dense(&ctx));
            match self.token_at(i) {
                Token::Eos => break,
                Token::Unit(u) => {
                    out.push(u);
                    if !ctx.is_empty() {
                        ctx.remove(0);
                        ctx.push(i as u32);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Renormalized `p^(1/tau)`, computed in log space.
pub fn temperature_scaled(p: &[f64], tau: f64) -> Vec<f64> {
    let logs: Vec<f64> = p.iter().map(|x| x.ln() / tau).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= z);
    out
}

/// Inverse-CDF draw from a normalized distribution.
pub fn draw(p: &[f64], rng: &mut rng::Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

/// Lowest index of the maximum.
pub fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

pub fn entropy_bits(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.log2()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairNormalization {
    Total,
    PerToken,
}

impl fmt::Display for PairNormalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairNormalization::Total => "total",
            PairNormalization::PerToken => "per-token",
        })
    }
}

impl FromStr for PairNormalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "total" => Ok(PairNormalization::Total),
            "per-token" => Ok(PairNormalization::PerToken),
            other => Err(Error::invalid(format!("unknown normalization {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairReport {
    pub accuracy: f64,
    pub error_rate: f64,
    pub n_pairs: usize,
    /// Wins counted in half points (a tie is one half point).
    pub half_points: u64,
}

fn pair_score(model: &NGramModel, units: &[u32], normalize: PairNormalization) -> f64 {
    let r = model.score_default(units);
    match normalize {
        PairNormalization::Total => r.total_logprob,
        PairNormalization::PerToken => r.total_logprob / r.per_token.len() as f64,
    }
}

/// Fraction of pairs where the positive member outscores the negative one.
pub fn pair_accuracy(model: &NGramModel, pairs: &[Pair], normalize: PairNormalization) -> Result<PairReport> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no pairs".into()));
    }
    let mut half_points = 0u64;
    for p in pairs {
        if p.positive.is_empty() || p.negative.is_empty() {
            return Err(Error::invalid(format!("pair {:?} has an empty member", p.pair_id)));
        }
        let pos = pair_score(model, &p.positive, normalize);
        let neg = pair_score(model, &p.negative, normalize);
        half_points += if pos > neg {
            2
        } else if pos == neg {
            1
        } else {
            0
        };
    }
    let accuracy = half_points as f64 / (2 * pairs.len()) as f64;
    Ok(PairReport {
        accuracy,
        error_rate: 1.0 - accuracy,
        n_pairs: pairs.len(),
        half_points,
    })
}

// Model file: magic, version u16, order u32, smoothing tag u8, smoothing
// param f64, dedup u8, training tokens u64, vocab size u32, vocab ids, then
// per context length: context count u32 and for each context (sorted) its
// ids, total u64, entry count u32, (id u32, count u64) entries.

pub fn encode_model(model: &NGramModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.config.order as u32).to_le_bytes());
    let (tag, param) = match model.config.smoothing {
        Smoothing::AbsoluteDiscount { discount } => (0u8, discount),
        Smoothing::AddK { k } => (1u8, k),
    };
    out.push(tag);
    out.extend_from_slice(&param.to_le_bytes());
    out.push(u8::from(model.config.dedup));
    out.extend_from_slice(&model.training_tokens.to_le_bytes());
    out.extend_from_slice(&(model.vocab.len() as u32).to_le_bytes());
    for u in &model.vocab {
        out.extend_from_slice(&u.to_le_bytes());
    }
    for table in &model.tables {
        let mut ctxs: Vec<(&Vec<u32>, &ContextCounts)> = table.iter().collect();
        ctxs.sort_unstable_by(|a, b| a.0.cmp(b.0));
        out.extend_from_slice(&(ctxs.len() as u32).to_le_bytes());
        for (ctx, cc) in ctxs {
            for id in ctx {
                out.extend_from_slice(&id.to_le_bytes());
            }
            out.extend_from_slice(&cc.total.to_le_bytes());
            out.extend_from_slice(&(cc.next.len() as u32).to_le_bytes());
            for (id, c) in &cc.next {
                out.extend_from_slice(&id.to_le_bytes());
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.pos + n > self.bytes.len() {
            return Err(FormatError::Truncated {
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn corrupt(message: &str) -> FormatError {
    FormatError::Line {
        line: 0,
        message: message.to_owned(),
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<NGramModel, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4).map_err(|_| FormatError::BadMagic {
        expected: "GSLM".into(),
        found: String::from_utf8_lossy(bytes).into_owned(),
    })?;
    if magic != MODEL_MAGIC {
        return Err(FormatError::BadMagic {
            expected: "GSLM".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(FormatError::UnsupportedVersion {
            what: "n-gram model",
            version,
        });
    }
    let order = r.u32()? as usize;
    if order == 0 {
        return Err(corrupt("model order 0"));
    }
    let smoothing = match (r.u8()?, r.f64()?) {
        (0, discount) => Smoothing::AbsoluteDiscount { discount },
        (1, k) => Smoothing::AddK { k },
        _ => return Err(corrupt("unknown smoothing tag")),
    };
    let dedup = r.u8()? != 0;
    let training_tokens = r.u64()?;
    let nv = r.u32()? as usize;
    let vocab = (0..nv).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
    if vocab.windows(2).any(|w| w[0] >= w[1]) {
        return Err(corrupt("vocabulary not strictly increasing"));
    }
    let limit = nv as u32 + 2;
    let mut tables = Vec::with_capacity(order);
    for m in 0..order {
        let n_ctx = r.u32()? as usize;
        let mut table = HashMap::with_capacity(n_ctx);
        for _ in 0..n_ctx {
            let ctx = (0..m).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
            let total = r.u64()?;
            let n_next = r.u32()? as usize;
            let next = (0..n_next)
                .map(|_| Ok((r.u32()?, r.u64()?)))
                .collect::<Result<Vec<_>, FormatError>>()?;
            if ctx.iter().any(|&id| id >= limit)
                || next.iter().any(|&(id, c)| id > nv as u32 || c == 0)
                || next.iter().map(|(_, c)| c).sum::<u64>() != total
            {
                return Err(corrupt("inconsistent count table"));
            }
            table.insert(ctx, ContextCounts { total, next });
        }
        tables.push(table);
    }
    if r.pos != bytes.len() {
        return Err(FormatError::TrailingBytes {
            found: bytes.len() - r.pos,
        });
    }
    let index = vocab.iter().enumerate().map(|(i, &u)| (u, i as u32)).collect();
    Ok(NGramModel {
        config: NGramConfig {
            order,
            smoothing,
            dedup,
        },
        vocab,
        index,
        tables,
        training_tokens,
    })
}

pub fn write_model(path: impl AsRef<Path>, model: &NGramModel) -> Result<()> {
    write_file(path.as_ref(), encode_model(model))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<NGramModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes).map_err(|e| Error::parse(path, e))
}
