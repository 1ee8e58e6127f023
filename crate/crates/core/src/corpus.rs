//! On-disk formats and the in-memory corpus types they decode into.
//!
//! Binary files are little-endian and store reals as `f32`; everything is
//! widened to `f64` once loaded. Text formats are UTF-8, LF-terminated, with
//! tab-separated fields.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};

pub const FRAME_MAGIC: &[u8; 4] = b"GSLF";
pub const FRAME_VERSION: u16 = 1;
const FRAME_HEADER_LEN: usize = 4 + 2 + 4 + 4 + 4;

pub const ABX_HEADER: &str = "#file onset offset #phone prev-phone next-phone speaker";

/// Per-utterance matrix of frame embeddings, `rows` frames of `cols` dims.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    pub utt_id: String,
    frame_period_ms: f64,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FrameMatrix {
    pub fn new(
        utt_id: impl Into<String>,
        frame_period_ms: f64,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    ) -> Result<Self, FormatError> {
        if !(frame_period_ms.is_finite() && frame_period_ms > 0.0) {
            return Err(FormatError::InvalidPeriod(frame_period_ms));
        }
        if rows == 0 || cols == 0 {
            return Err(FormatError::ZeroDims { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(FormatError::Truncated {
                expected: rows * cols,
                found: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite { index });
        }
        Ok(Self {
            utt_id: utt_id.into(),
            frame_period_ms,
            rows,
            cols,
            data,
        })
    }

    /// Builds a matrix from a list of equally sized frames.
    pub fn from_rows(
        utt_id: impl Into<String>,
        frame_period_ms: f64,
        frames: &[Vec<f64>],
    ) -> Result<Self, FormatError> {
        let cols = frames.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(frames.len() * cols);
        for f in frames {
            if f.len() != cols {
                return Err(FormatError::Truncated {
                    expected: cols,
                    found: f.len(),
                });
            }
            data.extend_from_slice(f);
        }
        Self::new(utt_id, frame_period_ms, frames.len(), cols, data)
    }

    pub fn frame_period_ms(&self) -> f64 {
        self.frame_period_ms
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn duration_s(&self) -> f64 {
        self.rows as f64 * self.frame_period_ms / 1000.0
    }

    /// Center time of frame `i`, in seconds.
    pub fn center_s(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.frame_period_ms / 1000.0
    }

    /// Applies `f` to every frame, keeping the shape. Used by tests and
    /// synthetic-data tooling.
    pub fn map_rows(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self, FormatError> {
        let rows: Vec<Vec<f64>> = self.iter_rows().map(&mut f).collect();
        Self::from_rows(self.utt_id.clone(), self.frame_period_ms, &rows)
    }
}

/// Serializes a matrix to the `GSLF` binary layout.
pub fn encode_frame_matrix(fm: &FrameMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + fm.data.len() * 4);
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    out.extend_from_slice(&(fm.frame_period_ms as f32).to_le_bytes());
    out.extend_from_slice(&(fm.rows as u32).to_le_bytes());
    out.extend_from_slice(&(fm.cols as u32).to_le_bytes());
    for v in &fm.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

fn le_f32(b: &[u8]) -> f32 {
    f32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

pub fn decode_frame_matrix(utt_id: &str, bytes: &[u8]) -> Result<FrameMatrix, FormatError> {
    if bytes.len() < 4 || &bytes[..4] != FRAME_MAGIC {
        return Err(FormatError::BadMagic {
            expected: "GSLF".into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(FormatError::Truncated {
            expected: FRAME_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = le_u16(&bytes[4..6]);
    if version != FRAME_VERSION {
        return Err(FormatError::UnsupportedVersion {
            what: "frame matrix",
            version,
        });
    }
    let period = f64::from(le_f32(&bytes[6..10]));
    let rows = le_u32(&bytes[10..14]) as usize;
    let cols = le_u32(&bytes[14..18]) as usize;
    if rows == 0 || cols == 0 {
        return Err(FormatError::ZeroDims { rows, cols });
    }
    let expected = FRAME_HEADER_LEN + rows * cols * 4;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes {
            found: bytes.len() - expected,
        });
    }
    let data = bytes[FRAME_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f64::from(le_f32(c)))
        .collect();
    FrameMatrix::new(utt_id, period, rows, cols, data)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Reads a `GSLF` file; the utterance id defaults to the file stem.
pub fn read_frame_matrix(path: impl AsRef<Path>) -> Result<FrameMatrix> {
    let path = path.as_ref();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let bytes = read_bytes(path)?;
    decode_frame_matrix(&id, &bytes).map_err(|e| Error::parse(path, e))
}

pub fn write_frame_matrix(path: impl AsRef<Path>, fm: &FrameMatrix) -> Result<()> {
    write_file(path.as_ref(), encode_frame_matrix(fm))
}

/// Returns the frames whose center time lies in `[onset_s, offset_s)`.
pub fn slice_frames(fm: &FrameMatrix, onset_s: f64, offset_s: f64) -> Result<FrameMatrix> {
    // Allow the offset to overshoot the nominal duration by float noise.
    let slack = 1e-9 * fm.duration_s().max(1.0);
    if !(onset_s >= 0.0 && onset_s < offset_s && offset_s <= fm.duration_s() + slack) {
        return Err(Error::invalid(format!(
            "{}: interval [{onset_s}, {offset_s}) outside [0, {}]",
            fm.utt_id,
            fm.duration_s()
        )));
    }
    let picked: Vec<usize> = (0..fm.rows)
        .filter(|&i| {
            let c = fm.center_s(i);
            c >= onset_s && c < offset_s
        })
        .collect();
    let (Some(&first), Some(&last)) = (picked.first(), picked.last()) else {
        return Err(Error::InsufficientData(format!(
            "{}: interval [{onset_s}, {offset_s}) contains no frame center",
            fm.utt_id
        )));
    };
    let data = fm.data[first * fm.cols..(last + 1) * fm.cols].to_vec();
    Ok(FrameMatrix::new(
        fm.utt_id.clone(),
        fm.frame_period_ms,
        picked.len(),
        fm.cols,
        data,
    )?)
}

/// One utterance worth of discrete units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSequence {
    pub utt_id: String,
    pub units: Vec<u32>,
    pub duration_s: Option<f64>,
}

impl UnitSequence {
    pub fn new(utt_id: impl Into<String>, units: Vec<u32>) -> Self {
        Self {
            utt_id: utt_id.into(),
            units,
            duration_s: None,
        }
    }

    pub fn with_duration(mut self, duration_s: f64) -> Self {
        self.duration_s = Some(duration_s);
        self
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

fn split_id(line: &str, lineno: usize) -> Result<(&str, &str), FormatError> {
    match line.split_once('\t') {
        Some((id, rest)) if !id.is_empty() => Ok((id, rest)),
        Some(_) => Err(FormatError::Line {
            line: lineno,
            message: "empty id".into(),
        }),
        None => Ok((line, "")),
    }
}

fn parse_unit_tokens(rest: &str, lineno: usize) -> Result<Vec<u32>, FormatError> {
    rest.split_ascii_whitespace()
        .map(|tok| {
            // `u32::from_str` accepts a leading '+', which the format does not.
            if !tok.bytes().all(|b| b.is_ascii_digit()) {
                return Err(FormatError::BadToken {
                    line: lineno,
                    token: tok.to_owned(),
                });
            }
            tok.parse::<u32>().map_err(|_| FormatError::BadToken {
                line: lineno,
                token: tok.to_owned(),
            })
        })
        .collect()
}

/// Parses the unit text format: `<utt_id>\t<unit> <unit> ...` per line.
pub fn parse_units(text: &str) -> Result<Vec<UnitSequence>, FormatError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = split_id(line, lineno)?;
        let units = parse_unit_tokens(rest, lineno)?;
        if units.is_empty() {
            return Err(FormatError::EmptyUnits {
                line: lineno,
                id: id.to_owned(),
            });
        }
        if !seen.insert(id.to_owned()) {
            return Err(FormatError::DuplicateId {
                line: lineno,
                id: id.to_owned(),
            });
        }
        out.push(UnitSequence::new(id, units));
    }
    Ok(out)
}

pub fn format_units(seqs: &[UnitSequence]) -> String {
    let mut out = String::new();
    for s in seqs {
        out.push_str(&s.utt_id);
        out.push('\t');
        let mut first = true;
        for u in &s.units {
            if !first {
                out.push(' ');
            }
            first = false;
            out.push_str(&u.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn read_unit_file(path: impl AsRef<Path>) -> Result<Vec<UnitSequence>> {
    let path = path.as_ref();
    parse_units(&read_text(path)?).map_err(|e| Error::parse(path, e))
}

pub fn write_unit_file(path: impl AsRef<Path>, seqs: &[UnitSequence]) -> Result<()> {
    write_file(path.as_ref(), format_units(seqs))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn parse_real(field: &str, lineno: usize) -> Result<f64, FormatError> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| FormatError::BadToken {
            line: lineno,
            token: field.to_owned(),
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub frame_path: PathBuf,
    pub speaker: String,
    pub duration_s: f64,
}

/// Parses a manifest. Relative frame paths are resolved against `base_dir`.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Vec<ManifestEntry>, FormatError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (lineno, line) in data_lines(text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(FormatError::Line {
                line: lineno,
                message: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let duration_s = parse_real(fields[3], lineno)?;
        if duration_s <= 0.0 {
            return Err(FormatError::Line {
                line: lineno,
                message: format!("duration must be positive, got {duration_s}"),
            });
        }
        if fields[0].is_empty() || fields[2].is_empty() {
            return Err(FormatError::Line {
                line: lineno,
                message: "empty utterance id or speaker".into(),
            });
        }
        if !seen.insert(fields[0].to_owned()) {
            return Err(FormatError::DuplicateId {
                line: lineno,
                id: fields[0].to_owned(),
            });
        }
        let p = PathBuf::from(fields[1]);
        out.push(ManifestEntry {
            utt_id: fields[0].to_owned(),
            frame_path: if p.is_absolute() { p } else { base_dir.join(p) },
            speaker: fields[2].to_owned(),
            duration_s,
        });
    }
    Ok(out)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&read_text(path)?, base).map_err(|e| Error::parse(path, e))
}

/// Writes a manifest; paths are written as given.
pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    entries
        .iter()
        .map(|e| {
            format!(
                "{}\t{}\t{}\t{}\n",
                e.utt_id,
                e.frame_path.display(),
                e.speaker,
                e.duration_s
            )
        })
        .collect()
}

/// Loads every frame matrix listed in a manifest, relabelled with the
/// manifest's utterance ids.
pub fn load_manifest_frames(entries: &[ManifestEntry]) -> Result<Vec<FrameMatrix>> {
    entries
        .iter()
        .map(|e| {
            let mut fm = read_frame_matrix(&e.frame_path)?;
            fm.utt_id = e.utt_id.clone();
            Ok(fm)
        })
        .collect()
}

/// Attaches manifest durations to unit sequences by utterance id.
pub fn attach_durations(seqs: &mut [UnitSequence], entries: &[ManifestEntry]) -> Result<()> {
    let by_id: std::collections::HashMap<&str, f64> = entries
        .iter()
        .map(|e| (e.utt_id.as_str(), e.duration_s))
        .collect();
    for s in seqs {
        let d = by_id
            .get(s.utt_id.as_str())
            .ok_or_else(|| Error::MissingUtterance(s.utt_id.clone()))?;
        s.duration_s = Some(*d);
    }
    Ok(())
}

/// One ABX token: a phone occurrence with its triphone context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbxItem {
    pub utt_id: String,
    pub onset_s: f64,
    pub offset_s: f64,
    pub center_phone: String,
    pub prev_phone: String,
    pub next_phone: String,
    pub speaker: String,
}

pub fn parse_abx_items(text: &str) -> Result<Vec<AbxItem>, FormatError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.split_whitespace().eq(ABX_HEADER.split_whitespace()) => {}
        Some((line, _)) => {
            return Err(FormatError::Line {
                line,
                message: format!("expected header {ABX_HEADER:?}"),
            })
        }
        None => return Ok(Vec::new()),
    }
    let mut out = Vec::new();
    for (lineno, line) in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 {
            return Err(FormatError::Line {
                line: lineno,
                message: format!("expected 7 columns, found {}", f.len()),
            });
        }
        let onset_s = parse_real(f[1], lineno)?;
        let offset_s = parse_real(f[2], lineno)?;
        if !(onset_s >= 0.0 && onset_s < offset_s) {
            return Err(FormatError::Line {
                line: lineno,
                message: format!("invalid interval [{onset_s}, {offset_s})"),
            });
        }
        out.push(AbxItem {
            utt_id: f[0].to_owned(),
            onset_s,
            offset_s,
            center_phone: f[3].to_owned(),
            prev_phone: f[4].to_owned(),
            next_phone: f[5].to_owned(),
            speaker: f[6].to_owned(),
        });
    }
    Ok(out)
}

pub fn format_abx_items(items: &[AbxItem]) -> String {
    let mut out = format!("{ABX_HEADER}\n");
    for it in items {
        out.push_str(&format!(
            "{} {} {} {} {} {} {}\n",
            it.utt_id,
            it.onset_s,
            it.offset_s,
            it.center_phone,
            it.prev_phone,
            it.next_phone,
            it.speaker
        ));
    }
    out
}

pub fn read_abx_items(path: impl AsRef<Path>) -> Result<Vec<AbxItem>> {
    let path = path.as_ref();
    parse_abx_items(&read_text(path)?).map_err(|e| Error::parse(path, e))
}

/// A scored pair for spot-the-word or acceptability probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub pair_id: String,
    pub positive: Vec<u32>,
    pub negative: Vec<u32>,
}

impl Pair {
    /// Swaps the roles of the two members.
    pub fn swapped(&self) -> Self {
        Self {
            pair_id: self.pair_id.clone(),
            positive: self.negative.clone(),
            negative: self.positive.clone(),
        }
    }
}

pub fn parse_pairs(text: &str) -> Result<Vec<Pair>, FormatError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (lineno, line) in data_lines(text) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(FormatError::Line {
                line: lineno,
                message: format!("expected 3 tab-separated fields, found {}", f.len()),
            });
        }
        let positive = parse_unit_tokens(f[1], lineno)?;
        let negative = parse_unit_tokens(f[2], lineno)?;
        if positive.is_empty() || negative.is_empty() {
            return Err(FormatError::EmptyUnits {
                line: lineno,
                id: f[0].to_owned(),
            });
        }
        if !seen.insert(f[0].to_owned()) {
            return Err(FormatError::DuplicateId {
                line: lineno,
                id: f[0].to_owned(),
            });
        }
        out.push(Pair {
            pair_id: f[0].to_owned(),
            positive,
            negative,
        });
    }
    Ok(out)
}

pub fn format_pairs(pairs: &[Pair]) -> String {
    let join = |v: &[u32]| {
        v.iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join(" ")
    };
    pairs
        .iter()
        .map(|p| format!("{}\t{}\t{}\n", p.pair_id, join(&p.positive), join(&p.negative)))
        .collect()
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<Pair>> {
    let path = path.as_ref();
    parse_pairs(&read_text(path)?).map_err(|e| Error::parse(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Phone,
    Char,
    Word,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Phone => "phone",
            Level::Char => "char",
            Level::Word => "word",
        })
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phone" => Ok(Level::Phone),
            "char" => Ok(Level::Char),
            "word" => Ok(Level::Word),
            other => Err(Error::invalid(format!("unknown level {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub utt_id: String,
    pub tokens: Vec<String>,
    pub level: Level,
}

impl Transcript {
    pub fn new(utt_id: impl Into<String>, text: &str, level: Level) -> Self {
        Self {
            utt_id: utt_id.into(),
            tokens: text.split_whitespace().map(str::to_owned).collect(),
            level,
        }
    }
}

/// Parses `utt_id\t<tokens>`; the token list may be empty (hypotheses).
pub fn parse_transcripts(text: &str, level: Level) -> Result<Vec<Transcript>, FormatError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (lineno, line) in data_lines(text) {
        let (id, rest) = split_id(line, lineno)?;
        if !seen.insert(id.to_owned()) {
            return Err(FormatError::DuplicateId {
                line: lineno,
                id: id.to_owned(),
            });
        }
        out.push(Transcript::new(id, rest, level));
    }
    Ok(out)
}

pub fn format_transcripts(ts: &[Transcript]) -> String {
    ts.iter()
        .map(|t| format!("{}\t{}\n", t.utt_id, t.tokens.join(" ")))
        .collect()
}

pub fn read_transcripts(path: impl AsRef<Path>, level: Level) -> Result<Vec<Transcript>> {
    let path = path.as_ref();
    parse_transcripts(&read_text(path)?, level).map_err(|e| Error::parse(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(rows: usize, cols: usize, period: f64) -> FrameMatrix {
        let data = (0..rows * cols).map(|v| v as f64 * 0.5).collect();
        FrameMatrix::new("u", period, rows, cols, data).unwrap()
    }

    #[test]
    fn duration_from_rows_and_period() {
        let fm = decode_frame_matrix("u", &encode_frame_matrix(&matrix(2, 3, 10.0))).unwrap();
        assert_eq!(fm.rows(), 2);
        assert_eq!(fm.cols(), 3);
        assert_eq!(fm.duration_s(), 0.02);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = encode_frame_matrix(&matrix(2, 3, 10.0));
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            decode_frame_matrix("u", &bytes),
            Err(FormatError::BadMagic { .. })
        ));
    }

    #[test]
    fn rejects_truncated_payload() {
        let bytes = encode_frame_matrix(&matrix(100, 4, 10.0));
        let half = FRAME_HEADER_LEN + 50 * 4 * 4;
        assert!(matches!(
            decode_frame_matrix("u", &bytes[..half]),
            Err(FormatError::Truncated { .. })
        ));
        assert!(matches!(
            decode_frame_matrix("u", &bytes[..7]),
            Err(FormatError::Truncated { .. })
        ));
    }

    #[test]
    fn rejects_zero_dims_and_non_finite() {
        let mut bytes = encode_frame_matrix(&matrix(2, 3, 10.0));
        bytes[10..14].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            decode_frame_matrix("u", &bytes),
            Err(FormatError::ZeroDims { .. })
        ));

        let mut bytes = encode_frame_matrix(&matrix(2, 3, 10.0));
        let at = FRAME_HEADER_LEN + 4 * 4;
        bytes[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(
            decode_frame_matrix("u", &bytes),
            Err(FormatError::NonFinite { index: 4 })
        );
        bytes[at..at + 4].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert_eq!(
            decode_frame_matrix("u", &bytes),
            Err(FormatError::NonFinite { index: 4 })
        );
    }

    #[test]
    fn rejects_trailing_bytes_and_bad_version() {
        let mut bytes = encode_frame_matrix(&matrix(2, 3, 10.0));
        bytes.push(0);
        assert!(matches!(
            decode_frame_matrix("u", &bytes),
            Err(FormatError::TrailingBytes { found: 1 })
        ));
        let mut bytes = encode_frame_matrix(&matrix(2, 3, 10.0));
        bytes[4] = 9;
        assert!(matches!(
            decode_frame_matrix("u", &bytes),
            Err(FormatError::UnsupportedVersion { .. })
        ));
    }

    #[test]
    fn unit_line_parses() {
        let seqs = parse_units("u1\t10 11 21\n").unwrap();
        assert_eq!(seqs, vec![UnitSequence::new("u1", vec![10, 11, 21])]);
    }

    #[test]
    fn unit_errors() {
        assert!(matches!(
            parse_units("u1\t10 -3\n"),
            Err(FormatError::BadToken { line: 1, .. })
        ));
        assert!(matches!(
            parse_units("u1\t10 +3\n"),
            Err(FormatError::BadToken { .. })
        ));
        assert!(matches!(
            parse_units("u1\t1.5\n"),
            Err(FormatError::BadToken { .. })
        ));
        assert!(matches!(
            parse_units("u1\t1\nu1\t2\n"),
            Err(FormatError::DuplicateId { line: 2, .. })
        ));
        assert!(matches!(
            parse_units("u1\t\n"),
            Err(FormatError::EmptyUnits { .. })
        ));
        assert!(matches!(
            parse_units("u1\n"),
            Err(FormatError::EmptyUnits { .. })
        ));
    }

    #[test]
    fn unit_order_preserved() {
        let text = "b\t1\na\t2 3\nc\t4\n";
        let ids: Vec<_> = parse_units(text)
            .unwrap()
            .into_iter()
            .map(|s| s.utt_id)
            .collect();
        assert_eq!(ids, ["b", "a", "c"]);
        assert_eq!(format_units(&parse_units(text).unwrap()), text);
    }

    #[test]
    fn slice_by_center_time() {
        let fm = matrix(5, 2, 10.0);
        let s = slice_frames(&fm, 0.0, 0.02).unwrap();
        assert_eq!(s.rows(), 2);
        assert_eq!(s.row(1), fm.row(1));

        let s = slice_frames(&fm, 0.005, 0.015).unwrap();
        assert_eq!(s.rows(), 1);
        assert_eq!(s.row(0), fm.row(0));

        assert!(matches!(
            slice_frames(&fm, 0.02, 0.02),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            slice_frames(&fm, 0.03, 0.01),
            Err(Error::InvalidArgument(_))
        ));
        // Interval between two centers.
        assert!(matches!(
            slice_frames(&fm, 0.006, 0.014),
            Err(Error::InsufficientData(_))
        ));
        assert_eq!(slice_frames(&fm, 0.0, fm.duration_s()).unwrap(), fm);
    }

    #[test]
    fn abx_items_roundtrip_and_header() {
        let text = format!("{ABX_HEADER}\nu1 0.01 0.05 a b c s1\nu2 0.1 0.2 x y z s2\n");
        let items = parse_abx_items(&text).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].center_phone, "a");
        assert_eq!(items[0].prev_phone, "b");
        assert_eq!(items[0].next_phone, "c");
        assert_eq!(items[1].speaker, "s2");
        assert_eq!(parse_abx_items(&format_abx_items(&items)).unwrap(), items);
        assert!(parse_abx_items("u1 0 1 a b c s\n").is_err());
        assert!(parse_abx_items(&format!("{ABX_HEADER}\nu1 0.2 0.1 a b c s\n")).is_err());
    }

    #[test]
    fn pairs_and_transcripts() {
        let pairs = parse_pairs("p1\t1 2 3\t1 4 3\n").unwrap();
        assert_eq!(pairs[0].negative, vec![1, 4, 3]);
        assert!(parse_pairs("p1\t1 2\t\n").is_err());
        assert!(parse_pairs("p1\t1\t2\np1\t1\t3\n").is_err());

        let ts = parse_transcripts("u1\tthe cat\nu2\t\n", Level::Word).unwrap();
        assert_eq!(ts[0].tokens, ["the", "cat"]);
        assert!(ts[1].tokens.is_empty());
        assert!(parse_transcripts("u1\ta\nu1\tb\n", Level::Word).is_err());
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let m = parse_manifest("u1\tframes/u1.gslf\tspk\t1.5\n", Path::new("/data")).unwrap();
        assert_eq!(m[0].frame_path, PathBuf::from("/data/frames/u1.gslf"));
        assert_eq!(m[0].duration_s, 1.5);
        assert!(parse_manifest("u1\tx\tspk\t-1\n", Path::new("")).is_err());
        assert!(parse_manifest("u1\tx\tspk\n", Path::new("")).is_err());
    }

    #[test]
    fn frame_file_roundtrip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("utt7.gslf");
        let fm = matrix(3, 2, 20.0);
        write_frame_matrix(&path, &fm).unwrap();
        let back = read_frame_matrix(&path).unwrap();
        assert_eq!(back.utt_id, "utt7");
        assert_eq!(back.data(), fm.data());
        let err = read_frame_matrix(dir.path().join("missing.gslf")).unwrap_err();
        assert!(err.to_string().contains("missing.gslf"));
    }

    proptest! {
        #[test]
        fn frame_matrix_roundtrip(
            rows in 1usize..6,
            cols in 1usize..5,
            period in prop::sample::select(vec![10.0f32, 20.0, 12.5]),
            seed in prop::collection::vec(-1e6f32..1e6f32, 30),
        ) {
            let data: Vec<f64> = (0..rows * cols).map(|i| f64::from(seed[i % seed.len()])).collect();
            let fm = FrameMatrix::new("u", f64::from(period), rows, cols, data).unwrap();
            let back = decode_frame_matrix("u", &encode_frame_matrix(&fm)).unwrap();
            prop_assert_eq!(back, fm);
        }

        #[test]
        fn unit_file_roundtrip(seqs in prop::collection::vec(prop::collection::vec(any::<u32>(), 1..20), 1..8)) {
            let seqs: Vec<UnitSequence> = seqs
                .into_iter()
                .enumerate()
                .map(|(i, u)| UnitSequence::new(format!("utt{i}"), u))
                .collect();
            prop_assert_eq!(parse_units(&format_units(&seqs)).unwrap(), seqs);
        }

        #[test]
        fn slices_partition_frames(rows in 1usize..40, cuts in prop::collection::vec(0usize..40, 0..5)) {
            let fm = matrix(rows, 2, 10.0);
            // Cut points on frame boundaries give a partition of [0, duration).
            let mut bounds: Vec<usize> = cuts.into_iter().filter(|&c| c > 0 && c < rows).collect();
            bounds.push(0);
            bounds.push(rows);
            bounds.sort_unstable();
            bounds.dedup();
            let mut joined = Vec::new();
            for w in bounds.windows(2) {
                let s = slice_frames(&fm, w[0] as f64 * 0.01, w[1] as f64 * 0.01).unwrap();
                joined.extend_from_slice(s.data());
            }
            prop_assert_eq!(joined.as_slice(), fm.data());
        }
    }
}
