//! Within-utterance (auto-BLEU) and between-utterance (self-BLEU) repetition
//! measures, and VERT, their geometric mean.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::Serialize;

use crate::error::{Error, Result};

fn geometric_mean(values: &[f64]) -> f64 {
    if values.iter().any(|&v| v <= 0.0) {
        return 0.0;
    }
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

fn check_order(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("n-gram order must be >= 1"));
    }
    Ok(())
}

fn kgram_counts<T: Eq + Hash>(u: &[T], k: usize) -> HashMap<&[T], u32> {
    let mut counts = HashMap::new();
    if u.len() >= k {
        for g in u.windows(k) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Fraction of k-gram occurrences in `u` whose k-gram also occurs at some
/// other position. Zero when `u` is shorter than `k`.
pub fn auto_bleu_k<T: Eq + Hash>(u: &[T], k: usize) -> f64 {
    if k == 0 || u.len() < k {
        return 0.0;
    }
    let counts = kgram_counts(u, k);
    let repeated: u32 = counts.values().filter(|&&c| c >= 2).sum();
    f64::from(repeated) / (u.len() - k + 1) as f64
}

/// Geometric mean of [`auto_bleu_k`] over `k = 1..=n`.
pub fn auto_bleu<T: Eq + Hash>(u: &[T], n: usize) -> Result<f64> {
    check_order(n)?;
    if u.is_empty() {
        return Err(Error::invalid("auto-BLEU of an empty utterance"));
    }
    let ratios: Vec<f64> = (1..=n).map(|k| auto_bleu_k(u, k)).collect();
    Ok(geometric_mean(&ratios))
}

/// Mean auto-BLEU over a corpus.
pub fn mean_auto_bleu<T: Eq + Hash, S: AsRef<[T]>>(corpus: &[S], n: usize) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::InsufficientData("empty corpus".into()));
    }
    let mut total = 0.0;
    for u in corpus {
        total += auto_bleu(u.as_ref(), n)?;
    }
    Ok(total / corpus.len() as f64)
}

/// Closest reference length, shorter on ties.
fn closest_ref_len(hyp_len: usize, ref_lens: impl IntoIterator<Item = usize>) -> Option<usize> {
    ref_lens
        .into_iter()
        .min_by_key(|&r| (r.abs_diff(hyp_len), r))
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

fn combine(hyp_len: usize, ref_len: usize, precisions: &[f64]) -> f64 {
    if hyp_len == 0 {
        return 0.0;
    }
    let gm = geometric_mean(precisions);
    if gm == 0.0 {
        return 0.0;
    }
    brevity_penalty(hyp_len, ref_len) * gm
}

/// Sentence BLEU-n with clipped n-gram precision, uniform weights, no
/// smoothing, and the closest-length brevity penalty. Any zero precision
/// yields 0.
pub fn sentence_bleu<T: Eq + Hash, R: AsRef<[T]>>(hyp: &[T], refs: &[R], n: usize) -> Result<f64> {
    check_order(n)?;
    if refs.is_empty() {
        return Err(Error::invalid("BLEU needs at least one reference"));
    }
    let mut precisions = Vec::with_capacity(n);
    for k in 1..=n {
        let hyp_counts = kgram_counts(hyp, k);
        let ref_counts: Vec<HashMap<&[T], u32>> = refs.iter().map(|r| kgram_counts(r.as_ref(), k)).collect();
        let total: u32 = hyp_counts.values().sum();
        let clipped: u32 = hyp_counts
            .iter()
            .map(|(g, &c)| {
                let max_ref = ref_counts.iter().map(|rc| rc.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
                c.min(max_ref)
            })
            .sum();
        precisions.push(if total == 0 {
            0.0
        } else {
            f64::from(clipped) / f64::from(total)
        });
    }
    let r = closest_ref_len(hyp.len(), refs.iter().map(|r| r.as_ref().len())).unwrap_or(0);
    Ok(combine(hyp.len(), r, &precisions))
}

/// Top two counts of one k-gram across the corpus.
#[derive(Clone, Copy)]
struct TopTwo {
    best: u32,
    owner: usize,
    second: u32,
}

impl TopTwo {
    fn push(&mut self, c: u32, owner: usize) {
        if c > self.best {
            self.second = self.best;
            self.best = c;
            self.owner = owner;
        } else if c > self.second {
            self.second = c;
        }
    }

    fn excluding(&self, who: usize) -> u32 {
        if self.owner == who {
            self.second
        } else {
            self.best
        }
    }
}

/// Self-BLEU-n: every utterance is scored as a hypothesis against all other
/// utterances as references, and the scores are averaged.
pub fn self_bleu<T: Eq + Hash, S: AsRef<[T]>>(corpus: &[S], n: usize) -> Result<f64> {
    check_order(n)?;
    if corpus.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "self-BLEU needs at least 2 utterances, got {}",
            corpus.len()
        )));
    }
    let m = corpus.len();
    // clipped[i][k-1], totals[i][k-1]
    let mut clipped = vec![vec![0u32; n]; m];
    let mut totals = vec![vec![0u32; n]; m];
    for k in 1..=n {
        let per_utt: Vec<HashMap<&[T], u32>> = corpus.iter().map(|u| kgram_counts(u.as_ref(), k)).collect();
        let mut top: HashMap<&[T], TopTwo> = HashMap::new();
        for (i, counts) in per_utt.iter().enumerate() {
            for (&g, &c) in counts {
                top.entry(g)
                    .or_insert(TopTwo {
                        best: 0,
                        owner: usize::MAX,
                        second: 0,
                    })
                    .push(c, i);
            }
        }
        for (i, counts) in per_utt.iter().enumerate() {
            for (g, &c) in counts {
                clipped[i][k - 1] += c.min(top[g].excluding(i));
                totals[i][k - 1] += c;
            }
        }
    }
    let mut lens: BTreeMap<usize, usize> = BTreeMap::new();
    for u in corpus {
        *lens.entry(u.as_ref().len()).or_default() += 1;
    }
    let mut sum = 0.0;
    for i in 0..m {
        let c = corpus[i].as_ref().len();
        let others = lens.iter().filter_map(|(&l, &cnt)| {
            let cnt = if l == c { cnt - 1 } else { cnt };
            (cnt > 0).then_some(l)
        });
        let r = closest_ref_len(c, others).unwrap_or(0);
        let precisions: Vec<f64> = (0..n)
            .map(|k| {
                if totals[i][k] == 0 {
                    0.0
                } else {
                    f64::from(clipped[i][k]) / f64::from(totals[i][k])
                }
            })
            .collect();
        sum += combine(c, r, &precisions);
    }
    Ok(sum / m as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VertReport {
    pub self_bleu: f64,
    pub auto_bleu: f64,
    pub vert: f64,
}

/// VERT: geometric mean of self-BLEU-n and mean auto-BLEU-n.
pub fn vert<T: Eq + Hash, S: AsRef<[T]>>(corpus: &[S], n: usize) -> Result<VertReport> {
    let s = self_bleu(corpus, n)?;
    let a = mean_auto_bleu(corpus, n)?;
    Ok(VertReport {
        self_bleu: s,
        auto_bleu: a,
        vert: (s * a).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    /// Counts, for each position, whether the same k-gram appears at a
    /// different position, by direct comparison.
    fn brute_auto_bleu_k(u: &[u8], k: usize) -> f64 {
        if u.len() < k {
            return 0.0;
        }
        let n = u.len() - k + 1;
        let hits = (0..n)
            .filter(|&i| (0..n).any(|j| j != i && u[i..i + k] == u[j..j + k]))
            .count();
        hits as f64 / n as f64
    }

    fn brute_bleu(hyp: &[u8], refs: &[&[u8]], n: usize) -> f64 {
        if hyp.is_empty() {
            return 0.0;
        }
        let mut logs = 0.0;
        for k in 1..=n {
            if hyp.len() < k {
                return 0.0;
            }
            let grams: Vec<&[u8]> = hyp.windows(k).collect();
            let mut clipped = 0;
            let mut done: Vec<&[u8]> = Vec::new();
            for g in &grams {
                if done.contains(g) {
                    continue;
                }
                done.push(g);
                let c = grams.iter().filter(|h| *h == g).count();
                let m = refs
                    .iter()
                    .map(|r| r.windows(k).filter(|w| w == g).count())
                    .max()
                    .unwrap();
                clipped += c.min(m);
            }
            if clipped == 0 {
                return 0.0;
            }
            logs += (clipped as f64 / grams.len() as f64).ln();
        }
        let c = hyp.len();
        let mut r = refs[0].len();
        for rf in refs {
            let l = rf.len();
            if l.abs_diff(c) < r.abs_diff(c) || (l.abs_diff(c) == r.abs_diff(c) && l < r) {
                r = l;
            }
        }
        let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
        bp * (logs / n as f64).exp()
    }

    #[test]
    fn stutter_phrase_fully_repeats() {
        let u = words("the property the property the property");
        assert_eq!(auto_bleu(&u, 1).unwrap(), 1.0);
        assert_eq!(auto_bleu(&u, 2).unwrap(), 1.0);
        assert_eq!(auto_bleu(&words("a b c d"), 1).unwrap(), 0.0);
        assert_eq!(auto_bleu(&words("a b c d"), 3).unwrap(), 0.0);
    }

    #[test]
    fn short_utterances() {
        let u = ["a", "a"];
        assert_eq!(auto_bleu(&u, 1).unwrap(), 1.0);
        assert_eq!(auto_bleu_k(&u, 2), 0.0);
        assert_eq!(auto_bleu(&u, 2).unwrap(), 0.0);
        assert!(auto_bleu::<&str>(&[], 1).is_err());
        assert!(auto_bleu(&u, 0).is_err());
    }

    #[test]
    fn self_bleu_extremes() {
        let same = vec![words("a b c a b"); 4];
        assert!((self_bleu(&same, 2).unwrap() - 1.0).abs() < 1e-12);
        let disjoint = vec![words("a b c"), words("d e f"), words("g h")];
        assert_eq!(self_bleu(&disjoint, 2).unwrap(), 0.0);
        assert!(self_bleu(&[words("a")], 2).is_err());
    }

    #[test]
    fn self_bleu_handcrafted_against_oracle() {
        let corpus: Vec<&[u8]> = vec![b"abcab", b"abca", b"cbaab"];
        let got = self_bleu(&corpus, 2).unwrap();
        let mut want = 0.0;
        for i in 0..3 {
            let refs: Vec<&[u8]> = (0..3).filter(|&j| j != i).map(|j| corpus[j]).collect();
            want += brute_bleu(corpus[i], &refs, 2);
        }
        want /= 3.0;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert!(got > 0.0 && got < 1.0);
    }

    #[test]
    fn vert_is_geometric_mean() {
        let corpus = vec![words("a b a b c"), words("a b d e"), words("f g a b")];
        let r = vert(&corpus, 2).unwrap();
        assert!((r.vert * r.vert - r.self_bleu * r.auto_bleu).abs() < 1e-12);
        assert!(r.vert <= r.self_bleu.max(r.auto_bleu));
        let same = vec![words("x y x y x y"); 3];
        assert!((vert(&same, 2).unwrap().vert - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sentence_bleu_brevity_and_ties() {
        // Closest reference lengths 2 and 4 are equally far from 3: shorter wins.
        let hyp = b"abc";
        let refs: Vec<&[u8]> = vec![b"abcd", b"ab"];
        assert_eq!(sentence_bleu(hyp, &refs, 1).unwrap(), 1.0);
        let refs: Vec<&[u8]> = vec![b"abcdef"];
        let got = sentence_bleu(hyp, &refs, 2).unwrap();
        assert!((got - (1.0f64 - 2.0).exp()).abs() < 1e-12);
        assert_eq!(sentence_bleu(b"", &refs, 2).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn auto_bleu_matches_brute_force(u in prop::collection::vec(0u8..5, 1..=12), n in 1usize..5) {
            for k in 1..=n {
                prop_assert_eq!(auto_bleu_k(&u, k), brute_auto_bleu_k(&u, k));
            }
            let v = auto_bleu(&u, n).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn self_bleu_matches_sentence_bleu(corpus in prop::collection::vec(prop::collection::vec(0u8..4, 0..8), 2..6), n in 1usize..4) {
            let got = self_bleu(&corpus, n).unwrap();
            let mut want = 0.0;
            for i in 0..corpus.len() {
                let refs: Vec<&[u8]> = corpus.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, r)| r.as_slice()).collect();
                want += brute_bleu(&corpus[i], &refs, n);
                prop_assert!((sentence_bleu(&corpus[i], &refs, n).unwrap() - brute_bleu(&corpus[i], &refs, n)).abs() < 1e-12);
            }
            want /= corpus.len() as f64;
            prop_assert!((got - want).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&got));
        }
    }
}
