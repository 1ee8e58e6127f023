//! Phone, character and word error rates from Levenshtein alignments.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Level, Transcript};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct EditCounts {
    pub distance: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

/// Unit-cost edit distance from `reference` to `hypothesis`, with the
/// operation counts of one optimal alignment. The backtrace prefers
/// substitution (or match), then deletion, then insertion.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<EditCounts> {
    if reference.is_empty() {
        return Err(Error::invalid("empty reference"));
    }
    Ok(align(reference, hypothesis))
}

fn align<T: PartialEq>(r: &[T], h: &[T]) -> EditCounts {
    let (n, m) = (r.len(), h.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(r[i - 1] != h[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut c = EditCounts {
        distance: d[n * w + m],
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let miss = r[i - 1] != h[j - 1];
            if here == d[(i - 1) * w + j - 1] + usize::from(miss) {
                c.substitutions += usize::from(miss);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            c.deletions += 1;
            i -= 1;
        } else {
            c.insertions += 1;
            j -= 1;
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorRateReport {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_tokens: usize,
    pub rate: f64,
}

/// Lowercases and strips ASCII punctuation other than apostrophes, dropping
/// tokens that become empty.
pub fn normalize_tokens(tokens: &[String]) -> Vec<String> {
    tokens
        .iter()
        .map(|t| {
            t.chars()
                .filter(|&c| !(c.is_ascii_punctuation() && c != '\''))
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

fn units(t: &Transcript, level: Level, normalize: bool) -> Vec<String> {
    let tokens = if normalize {
        normalize_tokens(&t.tokens)
    } else {
        t.tokens.clone()
    };
    match level {
        Level::Char => tokens
            .iter()
            .flat_map(|w| w.chars().map(String::from))
            .collect(),
        Level::Phone | Level::Word => tokens,
    }
}

/// Micro-averaged error rate: total edits over total reference tokens.
/// At character level, word tokens are split into characters and spaces are
/// not counted.
pub fn error_rate(
    refs: &[Transcript],
    hyps: &[Transcript],
    level: Level,
    normalize: bool,
) -> Result<ErrorRateReport> {
    if refs.is_empty() {
        return Err(Error::InsufficientData("no reference transcripts".into()));
    }
    if let Some(t) = refs.iter().chain(hyps).find(|t| t.level != level) {
        return Err(Error::invalid(format!(
            "{}: transcript level {} does not match {level}",
            t.utt_id, t.level
        )));
    }
    let by_id: HashMap<&str, &Transcript> = hyps.iter().map(|h| (h.utt_id.as_str(), h)).collect();
    if let Some(r) = refs.iter().find(|r| !by_id.contains_key(r.utt_id.as_str())) {
        return Err(Error::MissingUtterance(r.utt_id.clone()));
    }
    if hyps.len() != refs.len() {
        let ref_ids: std::collections::HashSet<&str> = refs.iter().map(|r| r.utt_id.as_str()).collect();
        let extra = hyps.iter().find(|h| !ref_ids.contains(h.utt_id.as_str())).expect("extra hypothesis");
        return Err(Error::invalid(format!("hypothesis {:?} has no reference", extra.utt_id)));
    }
    let per_utt: Vec<(EditCounts, usize)> = refs
        .par_iter()
        .map(|r| {
            let rt = units(r, level, normalize);
            if rt.is_empty() {
                return Err(Error::invalid(format!("{}: empty reference", r.utt_id)));
            }
            let ht = units(by_id[r.utt_id.as_str()], level, normalize);
            Ok((align(&rt, &ht), rt.len()))
        })
        .collect::<Result<_>>()?;
    let mut report = ErrorRateReport {
        substitutions: 0,
        insertions: 0,
        deletions: 0,
        ref_tokens: 0,
        rate: 0.0,
    };
    for (c, n) in per_utt {
        report.substitutions += c.substitutions;
        report.insertions += c.insertions;
        report.deletions += c.deletions;
        report.ref_tokens += n;
    }
    let edits = report.substitutions + report.insertions + report.deletions;
    report.rate = edits as f64 / report.ref_tokens as f64;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    fn brute(a: &[u8], b: &[u8]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = brute(ra, rb) + usize::from(x != y);
                sub.min(brute(ra, b) + 1).min(brute(a, rb) + 1)
            }
        }
    }

    #[test]
    fn basic_cases() {
        let c = edit_distance(&chars("kitten"), &chars("sitting")).unwrap();
        assert_eq!(c.distance, 3);
        assert_eq!((c.substitutions, c.insertions, c.deletions), (2, 1, 0));
        assert_eq!(edit_distance(&[1], &[1]).unwrap(), EditCounts::default());
        let c = edit_distance(&["a"], &[]).unwrap();
        assert_eq!((c.distance, c.substitutions, c.insertions, c.deletions), (1, 0, 0, 1));
        assert!(edit_distance::<u8>(&[], &[1]).is_err());
    }

    fn tr(id: &str, text: &str, level: Level) -> Transcript {
        Transcript::new(id, text, level)
    }

    #[test]
    fn micro_average() {
        let refs = vec![
            tr("a", "p0 p1 p2 p3 p4 p5 p6 p7 p8 p9", Level::Phone),
            tr("b", "q0 q1 q2 q3 q4", Level::Phone),
        ];
        let hyps = vec![
            tr("b", "q0 q1 q2 q3", Level::Phone),
            tr("a", "p0 x1 p2 p3 p4 p5 p6 p7 p8 p9 p10", Level::Phone),
        ];
        let r = error_rate(&refs, &hyps, Level::Phone, false).unwrap();
        assert_eq!(r.rate, 0.2);
        assert_eq!((r.substitutions, r.insertions, r.deletions, r.ref_tokens), (1, 1, 1, 15));
        let mut reordered = refs.clone();
        reordered.reverse();
        assert_eq!(error_rate(&reordered, &hyps, Level::Phone, false).unwrap(), r);
    }

    #[test]
    fn char_level_and_empty_hyps() {
        let refs = vec![tr("a", "ab cd", Level::Char)];
        let r = error_rate(&refs, &[tr("a", "abcd", Level::Char)], Level::Char, false).unwrap();
        assert_eq!((r.rate, r.ref_tokens), (0.0, 4));
        let r = error_rate(&refs, &[tr("a", "", Level::Char)], Level::Char, false).unwrap();
        assert_eq!((r.rate, r.deletions), (1.0, 4));
    }

    #[test]
    fn id_and_level_checks() {
        let refs = vec![tr("a", "x y", Level::Word)];
        assert!(matches!(
            error_rate(&refs, &[tr("b", "x", Level::Word)], Level::Word, false),
            Err(Error::MissingUtterance(_))
        ));
        let two = vec![tr("a", "x", Level::Word), tr("b", "x", Level::Word)];
        assert!(error_rate(&refs, &two, Level::Word, false).is_err());
        assert!(error_rate(&refs, &[tr("a", "x", Level::Phone)], Level::Word, false).is_err());
    }

    #[test]
    fn normalization_is_opt_in() {
        let refs = vec![tr("a", "Hello, world!", Level::Word)];
        let hyps = vec![tr("a", "hello world", Level::Word)];
        assert_eq!(error_rate(&refs, &hyps, Level::Word, false).unwrap().rate, 1.0);
        assert_eq!(error_rate(&refs, &hyps, Level::Word, true).unwrap().rate, 0.0);
    }

    proptest! {
        #[test]
        fn matches_recursive_oracle(a in prop::collection::vec(0u8..3, 1..=7), b in prop::collection::vec(0u8..3, 0..=7)) {
            let c = edit_distance(&a, &b).unwrap();
            prop_assert_eq!(c.distance, brute(&a, &b));
            prop_assert_eq!(c.distance, c.substitutions + c.insertions + c.deletions);
            prop_assert_eq!(a.len() + c.insertions, b.len() + c.deletions);
        }

        #[test]
        fn is_a_metric(
            a in prop::collection::vec(0u8..3, 1..=8),
            b in prop::collection::vec(0u8..3, 1..=8),
            c in prop::collection::vec(0u8..3, 1..=8),
        ) {
            let d = |x: &[u8], y: &[u8]| edit_distance(x, y).unwrap().distance;
            prop_assert_eq!(d(&a, &a), 0);
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        }
    }
}
