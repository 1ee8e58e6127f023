//! Synthetic corpora with known ground truth.
//!
//! Two generators live here:
//!
//! - [`make_synthetic_corpus`] renders random phone strings as frame
//!   matrices (phone mean + speaker offset + Gaussian noise) and emits the
//!   matching ABX items, transcripts, manifest and per-frame gold labels.
//! - [`make_lexicon`] builds a unit-level lexicon, a Zipf-distributed
//!   sentence corpus over it and real-word/pseudoword pairs.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Zipf};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    self, format_abx_items, format_manifest, format_pairs, format_transcripts, AbxItem, FrameMatrix, Level,
    ManifestEntry, Pair, Transcript, UnitSequence, ABX_HEADER,
};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_phones: usize,
    pub embed_dim: usize,
    /// Inclusive `[min, max]` frames per phone segment.
    pub frames_per_phone: [usize; 2],
    pub n_speakers: usize,
    /// Standard deviation of each speaker-offset component.
    pub speaker_offset_scale: f64,
    /// Standard deviation of the per-frame noise.
    pub noise_sigma: f64,
    /// Standard deviation of each phone-mean component.
    pub class_separation: f64,
    pub n_utterances: usize,
    /// Inclusive `[min, max]` phones per utterance.
    pub phones_per_utterance: [usize; 2],
    pub frame_period_ms: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_phones: 8,
            embed_dim: 16,
            frames_per_phone: [3, 6],
            n_speakers: 2,
            speaker_offset_scale: 0.0,
            noise_sigma: 0.05,
            class_separation: 1.0,
            n_utterances: 40,
            phones_per_utterance: [5, 10],
            frame_period_ms: 10.0,
            seed: 0,
        }
    }
}

fn check_range(name: &str, [lo, hi]: [usize; 2], min: usize) -> Result<()> {
    if lo < min || lo > hi {
        return Err(Error::invalid(format!("{name} range [{lo}, {hi}] must satisfy {min} <= min <= max")));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_phones", self.n_phones),
            ("embed_dim", self.embed_dim),
            ("n_speakers", self.n_speakers),
            ("n_utterances", self.n_utterances),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be >= 1")));
            }
        }
        check_range("frames_per_phone", self.frames_per_phone, 1)?;
        check_range("phones_per_utterance", self.phones_per_utterance, 1)?;
        if self.n_phones == 1 && self.phones_per_utterance[1] > 1 {
            return Err(Error::invalid("a single phone cannot form strings without adjacent repeats"));
        }
        for (name, v) in [
            ("speaker_offset_scale", self.speaker_offset_scale),
            ("noise_sigma", self.noise_sigma),
            ("class_separation", self.class_separation),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.frame_period_ms > 0.0 && self.frame_period_ms.is_finite()) {
            return Err(Error::invalid("frame_period_ms must be positive"));
        }
        Ok(())
    }
}

pub fn phone_name(i: u32) -> String {
    format!("p{i}")
}

pub fn speaker_name(i: usize) -> String {
    format!("s{i}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub frames: Vec<FrameMatrix>,
    /// Gold phone index of every frame.
    pub frame_labels: Vec<UnitSequence>,
    /// Phone string of every utterance.
    pub phone_strings: Vec<UnitSequence>,
    pub items: Vec<AbxItem>,
    pub transcripts: Vec<Transcript>,
    /// Frame paths are relative to the output directory of [`SynthCorpus::write`].
    pub manifest: Vec<ManifestEntry>,
    pub phone_means: Vec<Vec<f64>>,
    pub speaker_offsets: Vec<Vec<f64>>,
}

fn gaussian_vec(r: &mut rng::Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(r);
            scale * z
        })
        .collect()
}

/// Draws `len` symbols from `0..n`, uniformly but never repeating the
/// previous symbol.
fn no_repeat_string(r: &mut rng::Rng, n: u32, len: usize) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::with_capacity(len);
    for _ in 0..len {
        let next = match out.last() {
            None => r.random_range(0..n),
            Some(&prev) => {
                let x = r.random_range(0..n - 1);
                if x >= prev {
                    x + 1
                } else {
                    x
                }
            }
        };
        out.push(next);
    }
    out
}

/// Renders a random corpus. Utterance `i` is spoken by speaker
/// `i % n_speakers`; items cover every interior phone.
pub fn make_synthetic_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut r = rng::seeded(cfg.seed);
    let dim = cfg.embed_dim;
    let phone_means: Vec<Vec<f64>> = (0..cfg.n_phones)
        .map(|_| gaussian_vec(&mut r, dim, cfg.class_separation))
        .collect();
    let speaker_offsets: Vec<Vec<f64>> = (0..cfg.n_speakers)
        .map(|_| gaussian_vec(&mut r, dim, cfg.speaker_offset_scale))
        .collect();
    let period_s = cfg.frame_period_ms / 1000.0;
    let mut out = SynthCorpus {
        frames: Vec::new(),
        frame_labels: Vec::new(),
        phone_strings: Vec::new(),
        items: Vec::new(),
        transcripts: Vec::new(),
        manifest: Vec::new(),
        phone_means,
        speaker_offsets,
    };
    let width = cfg.n_utterances.to_string().len().max(4);
    for u in 0..cfg.n_utterances {
        let id = format!("utt{u:0width$}");
        let spk = u % cfg.n_speakers;
        let [pmin, pmax] = cfg.phones_per_utterance;
        let len = r.random_range(pmin..=pmax);
        let phones = no_repeat_string(&mut r, cfg.n_phones as u32, len);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut bounds = Vec::with_capacity(phones.len());
        for &p in &phones {
            let [fmin, fmax] = cfg.frames_per_phone;
            let n = r.random_range(fmin..=fmax);
            bounds.push((labels.len(), labels.len() + n));
            for _ in 0..n {
                for d in 0..dim {
                    let noise: f64 = StandardNormal.sample(&mut r);
                    data.push(out.phone_means[p as usize][d] + out.speaker_offsets[spk][d] + cfg.noise_sigma * noise);
                }
                labels.push(p);
            }
        }
        let rows = labels.len();
        let fm = FrameMatrix::new(id.clone(), cfg.frame_period_ms, rows, dim, data)?;
        for k in 1..phones.len().saturating_sub(1) {
            let (s, e) = bounds[k];
            out.items.push(AbxItem {
                utt_id: id.clone(),
                onset_s: s as f64 * period_s,
                offset_s: e as f64 * period_s,
                center_phone: phone_name(phones[k]),
                prev_phone: phone_name(phones[k - 1]),
                next_phone: phone_name(phones[k + 1]),
                speaker: speaker_name(spk),
            });
        }
        let names: Vec<String> = phones.iter().map(|&p| phone_name(p)).collect();
        out.transcripts.push(Transcript::new(id.clone(), &names.join(" "), Level::Phone));
        out.manifest.push(ManifestEntry {
            utt_id: id.clone(),
            frame_path: PathBuf::from("frames").join(format!("{id}.gslf")),
            speaker: speaker_name(spk),
            duration_s: fm.duration_s(),
        });
        out.frame_labels
            .push(UnitSequence::new(id.clone(), labels).with_duration(fm.duration_s()));
        out.phone_strings.push(UnitSequence::new(id, phones));
        out.frames.push(fm);
    }
    Ok(out)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

impl SynthCorpus {
    /// Writes `frames/*.gslf`, `manifest.tsv`, `items.item`,
    /// `transcripts.txt`, `labels.units` and `phones.units` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        create_dir(&dir.join("frames"))?;
        let mut written = Vec::new();
        for (fm, m) in self.frames.iter().zip(&self.manifest) {
            let p = dir.join(&m.frame_path);
            corpus::write_frame_matrix(&p, fm)?;
            written.push(p);
        }
        let items = if self.items.is_empty() {
            format!("{ABX_HEADER}\n")
        } else {
            format_abx_items(&self.items)
        };
        for (name, text) in [
            ("manifest.tsv", format_manifest(&self.manifest)),
            ("items.item", items),
            ("transcripts.txt", format_transcripts(&self.transcripts)),
            ("labels.units", corpus::format_units(&self.frame_labels)),
            ("phones.units", corpus::format_units(&self.phone_strings)),
        ] {
            let p = dir.join(name);
            corpus::write_file(&p, text)?;
            written.push(p);
        }
        Ok(written)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconConfig {
    pub n_units: usize,
    pub n_words: usize,
    /// Inclusive `[min, max]` units per word.
    pub word_len: [usize; 2],
    pub n_sentences: usize,
    /// Inclusive `[min, max]` words per sentence.
    pub words_per_sentence: [usize; 2],
    /// Zipf exponent of word frequencies.
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for LexiconConfig {
    fn default() -> Self {
        Self {
            n_units: 20,
            n_words: 200,
            word_len: [4, 7],
            n_sentences: 500,
            words_per_sentence: [3, 8],
            zipf_exponent: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    /// Distinct words with no adjacent repeated unit; `words[i]` has Zipf rank `i + 1`.
    pub words: Vec<Vec<u32>>,
    pub sentences: Vec<UnitSequence>,
    /// One pair per word: the word against a one-unit substitution of it
    /// that is not itself a word.
    pub pairs: Vec<Pair>,
}

/// Builds a lexicon, a sentence corpus sampled from it and spot-the-word
/// pairs.
pub fn make_lexicon(cfg: &LexiconConfig) -> Result<Lexicon> {
    if cfg.n_units < 3 {
        return Err(Error::invalid("n_units must be >= 3"));
    }
    if cfg.n_words == 0 || cfg.n_sentences == 0 {
        return Err(Error::invalid("n_words and n_sentences must be >= 1"));
    }
    check_range("word_len", cfg.word_len, 2)?;
    check_range("words_per_sentence", cfg.words_per_sentence, 1)?;
    let capacity = cfg.n_units as f64 * ((cfg.n_units - 1) as f64).powi(cfg.word_len[1] as i32 - 1);
    if (cfg.n_words as f64) * 4.0 > capacity {
        return Err(Error::invalid("too many words for the unit inventory and word lengths"));
    }
    let zipf = Zipf::new(cfg.n_words as f64, cfg.zipf_exponent)
        .map_err(|e| Error::invalid(format!("zipf: {e}")))?;
    let mut r = rng::seeded(cfg.seed);
    let n = cfg.n_units as u32;
    let mut seen = HashSet::new();
    let mut words = Vec::with_capacity(cfg.n_words);
    while words.len() < cfg.n_words {
        let len = r.random_range(cfg.word_len[0]..=cfg.word_len[1]);
        let w = no_repeat_string(&mut r, n, len);
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    let sentences = (0..cfg.n_sentences)
        .map(|i| {
            let k = r.random_range(cfg.words_per_sentence[0]..=cfg.words_per_sentence[1]);
            let mut units = Vec::new();
            for _ in 0..k {
                let rank = zipf.sample(&mut r) as usize;
                units.extend_from_slice(&words[rank - 1]);
            }
            UnitSequence::new(format!("sent{i:05}"), units)
        })
        .collect();
    let mut pairs = Vec::with_capacity(words.len());
    for (i, w) in words.iter().enumerate() {
        let negative = loop {
            let pos = r.random_range(0..w.len());
            let mut p = w.clone();
            p[pos] = r.random_range(0..n);
            let ok = p[pos] != w[pos]
                && (pos == 0 || p[pos - 1] != p[pos])
                && (pos + 1 == p.len() || p[pos + 1] != p[pos])
                && !seen.contains(&p);
            if ok {
                break p;
            }
        };
        pairs.push(Pair {
            pair_id: format!("w{i:04}"),
            positive: w.clone(),
            negative,
        });
    }
    Ok(Lexicon {
        words,
        sentences,
        pairs,
    })
}

impl Lexicon {
    /// Writes `sentences.units`, `words.units` and `pairs.tsv` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        create_dir(dir)?;
        let words: Vec<UnitSequence> = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| UnitSequence::new(format!("w{i:04}"), w.clone()))
            .collect();
        let mut written = Vec::new();
        for (name, text) in [
            ("sentences.units", corpus::format_units(&self.sentences)),
            ("words.units", corpus::format_units(&words)),
            ("pairs.tsv", format_pairs(&self.pairs)),
        ] {
            let p = dir.join(name);
            corpus::write_file(&p, text)?;
            written.push(p);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_frames_equal_means() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            n_speakers: 1,
            n_utterances: 5,
            ..Default::default()
        };
        let c = make_synthetic_corpus(&cfg).unwrap();
        for (fm, labels) in c.frames.iter().zip(&c.frame_labels) {
            assert_eq!(fm.rows(), labels.len());
            for (row, &l) in fm.iter_rows().zip(&labels.units) {
                assert_eq!(row, c.phone_means[l as usize].as_slice());
            }
        }
    }

    #[test]
    fn items_match_gold_strings() {
        let c = make_synthetic_corpus(&SynthConfig::default()).unwrap();
        let mut n_items = 0;
        for (fm, ps) in c.frames.iter().zip(&c.phone_strings) {
            n_items += ps.len().saturating_sub(2);
            let labels = &c.frame_labels.iter().find(|l| l.utt_id == fm.utt_id).unwrap().units;
            for item in c.items.iter().filter(|i| i.utt_id == fm.utt_id) {
                let slice = corpus::slice_frames(fm, item.onset_s, item.offset_s).unwrap();
                let first = (item.onset_s * 1000.0 / fm.frame_period_ms()).round() as usize;
                let gold = &labels[first..first + slice.rows()];
                assert!(gold.iter().all(|&l| phone_name(l) == item.center_phone));
            }
            for w in ps.units.windows(2) {
                assert_ne!(w[0], w[1]);
            }
        }
        assert_eq!(c.items.len(), n_items);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let cfg = SynthConfig::default();
        assert_eq!(make_synthetic_corpus(&cfg).unwrap(), make_synthetic_corpus(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(make_synthetic_corpus(&cfg).unwrap().frames, make_synthetic_corpus(&other).unwrap().frames);
        assert!(make_synthetic_corpus(&SynthConfig { n_phones: 0, ..cfg }).is_err());
    }

    #[test]
    fn phone_frequencies_are_near_uniform() {
        let cfg = SynthConfig {
            n_utterances: 400,
            embed_dim: 2,
            ..Default::default()
        };
        let c = make_synthetic_corpus(&cfg).unwrap();
        let mut counts = vec![0f64; cfg.n_phones];
        for s in &c.phone_strings {
            for &p in &s.units {
                counts[p as usize] += 1.0;
            }
        }
        let total: f64 = counts.iter().sum();
        let e = total / cfg.n_phones as f64;
        let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
        // 7 degrees of freedom; the 0.999 quantile is about 24.3.
        assert!(chi2 < 24.3, "chi2 = {chi2}");
    }

    #[test]
    fn lexicon_pairs_are_minimal() {
        let lex = make_lexicon(&LexiconConfig::default()).unwrap();
        assert_eq!(lex.words.len(), 200);
        assert_eq!(lex.pairs.len(), 200);
        let words: HashSet<_> = lex.words.iter().collect();
        for p in &lex.pairs {
            assert!(!words.contains(&p.negative));
            assert_eq!(p.positive.len(), p.negative.len());
            let diffs = p.positive.iter().zip(&p.negative).filter(|(a, b)| a != b).count();
            assert_eq!(diffs, 1);
        }
        assert_eq!(lex.sentences.len(), 500);
        assert_eq!(lex, make_lexicon(&LexiconConfig::default()).unwrap());
    }

    #[test]
    fn writes_all_formats() {
        let dir = tempfile::tempdir().unwrap();
        let c = make_synthetic_corpus(&SynthConfig {
            n_utterances: 3,
            ..Default::default()
        })
        .unwrap();
        c.write(dir.path()).unwrap();
        let manifest = corpus::read_manifest(dir.path().join("manifest.tsv")).unwrap();
        let frames = corpus::load_manifest_frames(&manifest).unwrap();
        for (a, b) in frames.iter().zip(&c.frames) {
            assert_eq!(a.rows(), b.rows());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x, f64::from(*y as f32));
            }
        }
        assert_eq!(corpus::read_abx_items(dir.path().join("items.item")).unwrap().len(), c.items.len());
        let lex = make_lexicon(&LexiconConfig {
            n_sentences: 10,
            ..Default::default()
        })
        .unwrap();
        lex.write(&dir.path().join("lex")).unwrap();
        assert_eq!(corpus::read_pairs(dir.path().join("lex/pairs.tsv")).unwrap(), lex.pairs);
    }
}
