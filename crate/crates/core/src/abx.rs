//! ABX discriminability over triphone items.
//!
//! A triple is `(x, a, b)` with `x` and `a` tokens of the same triphone
//! category `A` and `b` a token of a category `B` that differs only in the
//! center phone. The triple scores 1 when `d(a, x) < d(b, x)`, 0.5 on ties
//! and 0 otherwise, where `d` is a DTW distance between frame slices.
//!
//! Aggregation is fixed: triples are averaged into cells, cells are averaged
//! over contexts, then over `(A, B)` center pairs, then over speakers
//! (within) or `(ab-speaker, x-speaker)` pairs (across). The error rate is
//! one minus the aggregate.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{slice_frames, AbxItem, FrameMatrix};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Angular,
    Euclidean,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "angular" => Ok(Metric::Angular),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(Error::invalid(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Within,
    Across,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Within => "within",
            Mode::Across => "across",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "within" => Ok(Mode::Within),
            "across" => Ok(Mode::Across),
            other => Err(Error::invalid(format!("unknown mode {other:?}"))),
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn l2(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Angle between two unit vectors, scaled to `[0, 1]`.
///
/// Uses `2 atan2(|u - v|, |u + v|)`, which equals `acos(u . v)` but stays
/// accurate near 0 and pi.
fn unit_angle(u: &[f64], v: &[f64]) -> f64 {
    let (mut diff, mut sum) = (0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        diff += (a - b) * (a - b);
        sum += (a + b) * (a + b);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt()) / std::f64::consts::PI
}

fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::invalid("zero vector under angular metric"));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

pub fn frame_distance(u: &[f64], v: &[f64], metric: Metric) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    match metric {
        Metric::Euclidean => Ok(l2(u, v)),
        Metric::Angular => Ok(unit_angle(&normalized(u)?, &normalized(v)?)),
    }
}

/// DTW over two frame sequences with steps (1,0), (0,1), (1,1). Returns the
/// optimal summed cost divided by the length of the backtraced path.
pub fn dtw_distance(x: &FrameMatrix, y: &FrameMatrix, metric: Metric) -> Result<f64> {
    if x.cols() != y.cols() {
        return Err(Error::DimensionMismatch {
            expected: x.cols(),
            found: y.cols(),
        });
    }
    let prep = |fm: &FrameMatrix| -> Result<Vec<Vec<f64>>> {
        fm.iter_rows()
            .map(|r| match metric {
                Metric::Angular => normalized(r),
                Metric::Euclidean => Ok(r.to_vec()),
            })
            .collect()
    };
    let (xs, ys) = (prep(x)?, prep(y)?);
    Ok(dtw_prepared(&xs, &ys, metric))
}

/// DTW over rows already normalized for `metric`.
fn dtw_prepared(xs: &[Vec<f64>], ys: &[Vec<f64>], metric: Metric) -> f64 {
    let local = |a: &[f64], b: &[f64]| match metric {
        Metric::Angular => unit_angle(a, b),
        Metric::Euclidean => l2(a, b),
    };
    dtw_from_costs(xs.len(), ys.len(), |i, j| local(&xs[i], &ys[j]))
}

/// DTW given a local cost function over an `n x m` grid.
pub fn dtw_from_costs(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> f64 {
    assert!(n > 0 && m > 0, "dtw over an empty sequence");
    let mut acc = vec![0f64; n * m];
    let at = |i: usize, j: usize| i * m + j;
    for i in 0..n {
        for j in 0..m {
            let c = cost(i, j);
            acc[at(i, j)] = c + match (i, j) {
                (0, 0) => 0.0,
                (0, _) => acc[at(0, j - 1)],
                (_, 0) => acc[at(i - 1, 0)],
                _ => acc[at(i - 1, j - 1)]
                    .min(acc[at(i - 1, j)])
                    .min(acc[at(i, j - 1)]),
            };
        }
    }
    // Backtrace preferring diagonal, then vertical, then horizontal moves.
    let (mut i, mut j) = (n - 1, m - 1);
    let mut len = 1usize;
    while i > 0 && j > 0 {
        let diag = acc[at(i - 1, j - 1)];
        let up = acc[at(i - 1, j)];
        let left = acc[at(i, j - 1)];
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        len += 1;
    }
    len += i + j;
    acc[at(n - 1, m - 1)] / len as f64
}

/// Score of one triple given `d(a, x)` and `d(b, x)`.
pub fn triple_score(d_ax: f64, d_bx: f64) -> f64 {
    if d_ax < d_bx {
        1.0
    } else if d_ax == d_bx {
        0.5
    } else {
        0.0
    }
}

/// Exact running tally of triple scores, kept in half points.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub half_points: u64,
    pub n: u64,
}

impl Tally {
    pub fn add(&mut self, d_ax: f64, d_bx: f64) {
        self.half_points += (triple_score(d_ax, d_bx) * 2.0) as u64;
        self.n += 1;
    }

    pub fn score(&self) -> f64 {
        self.half_points as f64 / (2 * self.n) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbxConfig {
    pub mode: Mode,
    pub metric: Metric,
    /// Triples per cell above which a uniform subsample is drawn.
    pub max_triples_per_cell: usize,
    pub seed: u64,
}

impl Default for AbxConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Within,
            metric: Metric::Angular,
            max_triples_per_cell: 5000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellScore {
    pub center_a: String,
    pub center_b: String,
    pub prev_phone: String,
    pub next_phone: String,
    /// Speaker of all tokens (within) or `"<ab-speaker>><x-speaker>"`.
    pub speakers: String,
    pub score: f64,
    pub n_triples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbxResult {
    pub mode: Mode,
    pub error_rate: f64,
    pub n_triples: u64,
    pub cells: Vec<CellScore>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct GroupKey {
    prev: String,
    next: String,
    center: String,
    speaker: String,
}

/// One (x-group, a-group, b-group) combination to evaluate.
struct Cell {
    prev: String,
    next: String,
    center_a: String,
    center_b: String,
    speakers: String,
    x: Vec<usize>,
    a: Vec<usize>,
    b: Vec<usize>,
    /// x and a are drawn from the same group and must differ.
    same_group: bool,
}

impl Cell {
    fn total(&self) -> u64 {
        let xa = if self.same_group {
            self.x.len() as u64 * (self.x.len() as u64 - 1)
        } else {
            self.x.len() as u64 * self.a.len() as u64
        };
        xa * self.b.len() as u64
    }

    /// Decodes a triple index into item indices.
    fn triple(&self, t: u64) -> (usize, usize, usize) {
        let nb = self.b.len() as u64;
        let (xa, bi) = (t / nb, t % nb);
        let (xi, ai) = if self.same_group {
            let na = self.x.len() as u64 - 1;
            let (xi, ai) = (xa / na, xa % na);
            (xi, if ai >= xi { ai + 1 } else { ai })
        } else {
            let na = self.a.len() as u64;
            (xa / na, xa % na)
        };
        (
            self.x[xi as usize],
            self.a[ai as usize],
            self.b[bi as usize],
        )
    }

    fn key_string(&self) -> String {
        format!(
            "{}\u{1f}{}\u{1f}{}\u{1f}{}\u{1f}{}",
            self.prev, self.next, self.center_a, self.center_b, self.speakers
        )
    }
}

fn build_cells(items: &[AbxItem], mode: Mode) -> Vec<Cell> {
    let mut groups: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        groups
            .entry(GroupKey {
                prev: it.prev_phone.clone(),
                next: it.next_phone.clone(),
                center: it.center_phone.clone(),
                speaker: it.speaker.clone(),
            })
            .or_default()
            .push(i);
    }
    // Context -> center -> speaker -> items.
    let mut by_ctx: BTreeMap<(&str, &str), BTreeMap<&str, BTreeMap<&str, &Vec<usize>>>> =
        BTreeMap::new();
    for (k, v) in &groups {
        by_ctx
            .entry((k.prev.as_str(), k.next.as_str()))
            .or_default()
            .entry(k.center.as_str())
            .or_default()
            .insert(k.speaker.as_str(), v);
    }
    let mut cells = Vec::new();
    for ((prev, next), centers) in &by_ctx {
        for (ca, spk_a) in centers {
            for (cb, spk_b) in centers {
                if ca == cb {
                    continue;
                }
                for (s_ab, a_items) in spk_a {
                    let Some(b_items) = spk_b.get(s_ab) else {
                        continue;
                    };
                    let mk = |speakers: String, x: &Vec<usize>, same_group: bool| Cell {
                        prev: prev.to_string(),
                        next: next.to_string(),
                        center_a: ca.to_string(),
                        center_b: cb.to_string(),
                        speakers,
                        x: x.clone(),
                        a: (*a_items).clone(),
                        b: (*b_items).clone(),
                        same_group,
                    };
                    match mode {
                        Mode::Within => {
                            if a_items.len() >= 2 {
                                cells.push(mk(s_ab.to_string(), a_items, true));
                            }
                        }
                        Mode::Across => {
                            for (s_x, x_items) in spk_a {
                                if s_x != s_ab {
                                    cells.push(mk(format!("{s_ab}>{s_x}"), x_items, false));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cells
}

/// Slices every item out of its utterance and prepares it for `metric`.
fn item_features(
    items: &[AbxItem],
    frames: &HashMap<&str, &FrameMatrix>,
    metric: Metric,
) -> Result<Vec<Vec<Vec<f64>>>> {
    items
        .par_iter()
        .map(|it| {
            let fm = frames
                .get(it.utt_id.as_str())
                .ok_or_else(|| Error::MissingUtterance(it.utt_id.clone()))?;
            let sl = slice_frames(fm, it.onset_s, it.offset_s)?;
            sl.iter_rows()
                .map(|r| match metric {
                    Metric::Angular => normalized(r),
                    Metric::Euclidean => Ok(r.to_vec()),
                })
                .collect()
        })
        .collect()
}

fn evaluate_cell(cell: &Cell, feats: &[Vec<Vec<f64>>], cfg: &AbxConfig) -> Tally {
    let total = cell.total();
    let mut cache: HashMap<(usize, usize), f64> = HashMap::new();
    let mut dist = |i: usize, j: usize| {
        *cache
            .entry((i, j))
            .or_insert_with(|| dtw_prepared(&feats[i], &feats[j], cfg.metric))
    };
    let mut tally = Tally::default();
    let mut visit = |t: u64| {
        let (x, a, b) = cell.triple(t);
        let d_ax = dist(a, x);
        let d_bx = dist(b, x);
        tally.add(d_ax, d_bx);
    };
    let cap = cfg.max_triples_per_cell as u64;
    if total <= cap {
        (0..total).for_each(&mut visit);
    } else {
        let mut r = rng::derived(cfg.seed, &[rng::fnv1a(cell.key_string().as_bytes())]);
        let mut picks: Vec<usize> = index::sample(&mut r, total as usize, cap as usize).into_vec();
        picks.sort_unstable();
        picks.into_iter().for_each(|t| visit(t as u64));
    }
    tally
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Computes the ABX error rate over `items`, reading frames from `frames`.
pub fn abx_score(items: &[AbxItem], frames: &[FrameMatrix], cfg: &AbxConfig) -> Result<AbxResult> {
    if cfg.max_triples_per_cell == 0 {
        return Err(Error::invalid("max_triples_per_cell must be >= 1"));
    }
    let by_id: HashMap<&str, &FrameMatrix> = frames.iter().map(|f| (f.utt_id.as_str(), f)).collect();
    let feats = item_features(items, &by_id, cfg.metric)?;
    let cells = build_cells(items, cfg.mode);
    if cells.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no valid {} ABX cells in {} items",
            cfg.mode,
            items.len()
        )));
    }
    let scored: Vec<CellScore> = cells
        .par_iter()
        .map(|cell| {
            let t = evaluate_cell(cell, &feats, cfg);
            CellScore {
                center_a: cell.center_a.clone(),
                center_b: cell.center_b.clone(),
                prev_phone: cell.prev.clone(),
                next_phone: cell.next.clone(),
                speakers: cell.speakers.clone(),
                score: t.score(),
                n_triples: t.n,
            }
        })
        .collect();

    let mut over_ctx: BTreeMap<(&str, &str, &str), Vec<f64>> = BTreeMap::new();
    for c in &scored {
        over_ctx
            .entry((&c.speakers, &c.center_a, &c.center_b))
            .or_default()
            .push(c.score);
    }
    let mut over_pairs: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for ((spk, _, _), v) in over_ctx {
        over_pairs.entry(spk).or_default().push(mean(v));
    }
    let aggregate = mean(over_pairs.into_values().map(mean));
    Ok(AbxResult {
        mode: cfg.mode,
        error_rate: 1.0 - aggregate,
        n_triples: scored.iter().map(|c| c.n_triples).sum(),
        cells: scored,
    })
}
