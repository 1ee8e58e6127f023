//! k-means codebooks over frame embeddings, frame-to-unit encoding,
//! run-length dedup and bitrate.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;

use crate::corpus::{write_file, FrameMatrix, UnitSequence};
use crate::error::{Error, FormatError, Result};
use crate::rng;

pub const CODEBOOK_MAGIC: &[u8; 4] = b"GSLK";
pub const CODEBOOK_VERSION: u16 = 1;

/// Statistics from a training run. Not persisted in codebook files.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingStats {
    pub inertia: f64,
    pub iterations_run: usize,
    /// Inertia after each assignment step, first entry from the initial
    /// centroids.
    pub inertia_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    dim: usize,
    centroids: Vec<f64>,
    pub seed: u64,
    pub training: Option<TrainingStats>,
}

impl Codebook {
    pub fn from_centroids(centroids: &[Vec<f64>], seed: u64) -> Result<Self> {
        let k = centroids.len();
        if k < 2 {
            return Err(Error::invalid(format!("codebook needs K >= 2, got {k}")));
        }
        let dim = centroids[0].len();
        if dim == 0 {
            return Err(Error::invalid("codebook dimension must be >= 1"));
        }
        let mut flat = Vec::with_capacity(k * dim);
        for c in centroids {
            if c.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: c.len(),
                });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("non-finite centroid"));
            }
            flat.extend_from_slice(c);
        }
        Ok(Self {
            k,
            dim,
            centroids: flat,
            seed,
            training: None,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    pub fn inertia(&self) -> Option<f64> {
        self.training.as_ref().map(|t| t.inertia)
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        nearest(&self.centroids, self.dim, x)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[f64], dim: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: 300,
            rel_tol: 1e-6,
        }
    }
}

/// Trains a codebook with k-means++ seeding followed by Lloyd iterations.
///
/// Assignments are computed in parallel but centroid sums and inertia are
/// reduced in frame order, so the result does not depend on thread count.
pub fn train_codebook(frames: &[FrameMatrix], params: &KMeansParams) -> Result<Codebook> {
    let (points, dim) = flatten(frames)?;
    let (centroids, stats) = kmeans(&points, dim, params)?;
    Ok(Codebook {
        k: params.k,
        dim,
        centroids,
        seed: params.seed,
        training: Some(stats),
    })
}

fn flatten(frames: &[FrameMatrix]) -> Result<(Vec<f64>, usize)> {
    let dim = frames
        .first()
        .map(FrameMatrix::cols)
        .ok_or_else(|| Error::InsufficientData("no frames".into()))?;
    let mut points = Vec::new();
    for fm in frames {
        if fm.cols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: fm.cols(),
            });
        }
        points.extend_from_slice(fm.data());
    }
    Ok((points, dim))
}

/// Lloyd's algorithm on a flat row-major point array.
pub fn kmeans(points: &[f64], dim: usize, params: &KMeansParams) -> Result<(Vec<f64>, TrainingStats)> {
    let k = params.k;
    if k < 2 {
        return Err(Error::invalid(format!("K must be >= 2, got {k}")));
    }
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::invalid("point array does not match dimension"));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite frame value"));
    }
    if !(params.rel_tol >= 0.0) {
        return Err(Error::invalid("rel_tol must be >= 0"));
    }
    let n = points.len() / dim;
    let distinct = points
        .chunks_exact(dim)
        .map(|p| p.iter().map(|v| (v + 0.0).to_bits()).collect::<Vec<_>>())
        .collect::<HashSet<_>>()
        .len();
    if distinct < k {
        return Err(Error::InsufficientData(format!(
            "{distinct} distinct frames for K={k}"
        )));
    }

    let mut rng = rng::seeded(params.seed);
    let mut centroids = kmeans_pp_init(points, dim, k, &mut rng);
    let mut assign = vec![0usize; n];
    let mut dists = vec![0f64; n];
    let mut trace = Vec::new();
    let mut iterations = 0;

    let mut inertia = assign_all(points, dim, &centroids, &mut assign, &mut dists);
    trace.push(inertia);
    while iterations < params.max_iter {
        iterations += 1;
        update_centroids(points, dim, k, &assign, &dists, &mut centroids);
        let prev_assign = assign.clone();
        let prev = inertia;
        inertia = assign_all(points, dim, &centroids, &mut assign, &mut dists);
        trace.push(inertia);
        debug_assert!(inertia <= prev, "inertia increased: {prev} -> {inertia}");
        if assign == prev_assign || prev == 0.0 || (prev - inertia) / prev < params.rel_tol {
            break;
        }
    }
    Ok((
        centroids,
        TrainingStats {
            inertia,
            iterations_run: iterations,
            inertia_trace: trace,
        },
    ))
}

fn kmeans_pp_init(points: &[f64], dim: usize, k: usize, rng: &mut rng::Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(point(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(point(i), point(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        // Distinct-point precondition guarantees total > 0 until K are chosen.
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            acc += d;
            if acc > target && d > 0.0 {
                pick = i;
                break;
            }
        }
        if d2[pick] == 0.0 {
            pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(pick);
        }
        let c = point(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), &c));
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

fn assign_all(
    points: &[f64],
    dim: usize,
    centroids: &[f64],
    assign: &mut [usize],
    dists: &mut [f64],
) -> f64 {
    points
        .par_chunks_exact(dim)
        .zip(assign.par_iter_mut().zip(dists.par_iter_mut()))
        .for_each(|(p, (a, d))| {
            let (i, dist) = nearest(centroids, dim, p);
            *a = i;
            *d = dist;
        });
    dists.iter().sum()
}

fn update_centroids(
    points: &[f64],
    dim: usize,
    k: usize,
    assign: &[usize],
    dists: &[f64],
    centroids: &mut [f64],
) {
    let mut sums = vec![0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.chunks_exact(dim).zip(assign) {
        counts[a] += 1;
        for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p) {
            *s += v;
        }
    }
    let mut taken: HashSet<usize> = HashSet::new();
    for c in 0..k {
        let dst = &mut centroids[c * dim..(c + 1) * dim];
        if counts[c] > 0 {
            let inv = counts[c] as f64;
            for (d, s) in dst.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                *d = s / inv;
            }
            continue;
        }
        // Empty cluster: move it onto the point farthest from its centroid.
        let far = dists
            .iter()
            .enumerate()
            .filter(|(i, _)| !taken.contains(i))
            .fold(None, |best: Option<(usize, f64)>, (i, &d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        if let Some((i, _)) = far {
            taken.insert(i);
            dst.copy_from_slice(&points[i * dim..(i + 1) * dim]);
        }
    }
}

/// Maps every frame to its nearest centroid.
pub fn encode(fm: &FrameMatrix, cb: &Codebook) -> Result<UnitSequence> {
    if fm.cols() != cb.dim {
        return Err(Error::DimensionMismatch {
            expected: cb.dim,
            found: fm.cols(),
        });
    }
    let units = fm.iter_rows().map(|r| cb.nearest(r).0 as u32).collect();
    Ok(UnitSequence {
        utt_id: fm.utt_id.clone(),
        units,
        duration_s: Some(fm.duration_s()),
    })
}

/// Collapses runs of identical adjacent units.
pub fn dedup(us: &UnitSequence) -> UnitSequence {
    let mut units = us.units.clone();
    units.dedup();
    UnitSequence {
        utt_id: us.utt_id.clone(),
        units,
        duration_s: us.duration_s,
    }
}

/// Bitrate in bits per second: symbol rate times empirical unigram entropy.
pub fn bitrate(corpus: &[UnitSequence], post_dedup: bool) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::InsufficientData("empty corpus".into()));
    }
    let mut counts: HashMap<u32, u64> = HashMap::new();
    let mut n_total = 0u64;
    let mut d_total = 0f64;
    for us in corpus {
        let d = us
            .duration_s
            .filter(|d| *d > 0.0 && d.is_finite())
            .ok_or_else(|| Error::invalid(format!("{}: missing or non-positive duration", us.utt_id)))?;
        d_total += d;
        let deduped;
        let units = if post_dedup {
            deduped = dedup(us);
            &deduped.units
        } else {
            &us.units
        };
        for &u in units {
            *counts.entry(u).or_default() += 1;
            n_total += 1;
        }
    }
    if n_total == 0 {
        return Ok(0.0);
    }
    // Sum in a canonical order so relabelling cannot perturb rounding.
    let mut freqs: Vec<u64> = counts.into_values().collect();
    freqs.sort_unstable();
    let n = n_total as f64;
    let entropy: f64 = freqs
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    Ok(n / d_total * entropy)
}

pub fn encode_codebook(cb: &Codebook) -> Vec<u8> {
    let mut out = Vec::with_capacity(22 + cb.centroids.len() * 4);
    out.extend_from_slice(CODEBOOK_MAGIC);
    out.extend_from_slice(&CODEBOOK_VERSION.to_le_bytes());
    out.extend_from_slice(&(cb.k as u32).to_le_bytes());
    out.extend_from_slice(&(cb.dim as u32).to_le_bytes());
    for v in &cb.centroids {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.extend_from_slice(&cb.seed.to_le_bytes());
    out
}

pub fn decode_codebook(bytes: &[u8]) -> Result<Codebook, FormatError> {
    if bytes.len() < 4 || &bytes[..4] != CODEBOOK_MAGIC {
        return Err(FormatError::BadMagic {
            expected: "GSLK".into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    if bytes.len() < 14 {
        return Err(FormatError::Truncated {
            expected: 14,
            found: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CODEBOOK_VERSION {
        return Err(FormatError::UnsupportedVersion {
            what: "codebook",
            version,
        });
    }
    let k = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    if k == 0 || dim == 0 {
        return Err(FormatError::ZeroDims { rows: k, cols: dim });
    }
    let expected = 14 + k * dim * 4 + 8;
    if bytes.len() != expected {
        return if bytes.len() < expected {
            Err(FormatError::Truncated {
                expected,
                found: bytes.len(),
            })
        } else {
            Err(FormatError::TrailingBytes {
                found: bytes.len() - expected,
            })
        };
    }
    let body = &bytes[14..14 + k * dim * 4];
    let centroids: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    if let Some(index) = centroids.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite { index });
    }
    let seed = u64::from_le_bytes(bytes[expected - 8..].try_into().unwrap());
    Ok(Codebook {
        k,
        dim,
        centroids,
        seed,
        training: None,
    })
}

pub fn write_codebook(path: impl AsRef<Path>, cb: &Codebook) -> Result<()> {
    write_file(path.as_ref(), encode_codebook(cb))
}

pub fn read_codebook(path: impl AsRef<Path>) -> Result<Codebook> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_codebook(&bytes).map_err(|e| Error::parse(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fm(rows: &[Vec<f64>]) -> FrameMatrix {
        FrameMatrix::from_rows("u", 10.0, rows).unwrap()
    }

    #[test]
    fn two_points_two_clusters() {
        let frames = fm(&[vec![0.0, 0.0], vec![1.0, 2.0], vec![0.0, 0.0], vec![1.0, 2.0]]);
        let cb = train_codebook(&[frames], &KMeansParams::new(2, 3)).unwrap();
        let mut cents = vec![cb.centroid(0).to_vec(), cb.centroid(1).to_vec()];
        cents.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(cents, vec![vec![0.0, 0.0], vec![1.0, 2.0]]);
        assert_eq!(cb.inertia(), Some(0.0));
    }

    #[test]
    fn too_few_distinct_points() {
        let frames = fm(&[vec![0.0], vec![1.0], vec![2.0], vec![2.0], vec![1.0]]);
        assert!(matches!(
            train_codebook(&[frames.clone()], &KMeansParams::new(5, 0)),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            train_codebook(&[frames], &KMeansParams::new(1, 0)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn well_separated_clouds_recover_means() {
        let mut r = rng::seeded(11);
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut rows = Vec::new();
        let mut sums = [[0.0f64; 2]; 3];
        for (ci, c) in centers.iter().enumerate() {
            for _ in 0..50 {
                let p = vec![
                    c[0] + r.random_range(-0.3..0.3),
                    c[1] + r.random_range(-0.3..0.3),
                ];
                sums[ci][0] += p[0];
                sums[ci][1] += p[1];
                rows.push(p);
            }
        }
        let cb = train_codebook(&[fm(&rows)], &KMeansParams::new(3, 5)).unwrap();
        for s in sums {
            let mean = [s[0] / 50.0, s[1] / 50.0];
            let (i, d) = cb.nearest(&mean);
            assert!(d < 1e-20, "centroid {i} is {d} away from cloud mean");
        }
        let trace = &cb.training.as_ref().unwrap().inertia_trace;
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn empty_clusters_are_repaired() {
        // Centroids 2 and 3 start far away from all data.
        let pts: Vec<f64> = vec![0.0, 0.1, 0.2, 5.0, 5.1, 5.2];
        let mut centroids = vec![0.1, 5.1, 100.0, 200.0];
        let mut assign = vec![0; 6];
        let mut dists = vec![0.0; 6];
        assign_all(&pts, 1, &centroids, &mut assign, &mut dists);
        update_centroids(&pts, 1, 4, &assign, &dists, &mut centroids);
        // The empty ones land on the two points farthest from their centroids.
        assert!((centroids[0] - 0.1).abs() < 1e-12 && (centroids[1] - 5.1).abs() < 1e-12);
        let mut moved = centroids[2..].to_vec();
        moved.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(pts.contains(&moved[0]) && pts.contains(&moved[1]));
        assert_ne!(moved[0], moved[1]);
    }

    #[test]
    fn encode_exact_hit_and_ties() {
        let cents: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, 0.0]).collect();
        let cb = Codebook::from_centroids(&cents, 0).unwrap();
        let us = encode(&fm(&[vec![7.0, 0.0]]), &cb).unwrap();
        assert_eq!(us.units, vec![7]);

        let cents = vec![vec![0.0], vec![9.0], vec![1.0], vec![9.0], vec![9.0], vec![3.0]];
        let cb = Codebook::from_centroids(&cents, 0).unwrap();
        let us = encode(&fm(&[vec![2.0], vec![2.0], vec![5.0]]), &cb).unwrap();
        assert_eq!(us.units, vec![2, 2, 5]);
        assert_eq!(us.len(), 3);
        assert_eq!(us.duration_s, Some(0.03));

        assert!(matches!(
            encode(&fm(&[vec![1.0, 2.0]]), &cb),
            Err(Error::DimensionMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn dedup_examples() {
        let us = UnitSequence::new("u1", vec![10, 11, 11, 11, 21, 32, 32, 32, 21]).with_duration(1.0);
        let d = dedup(&us);
        assert_eq!(d.units, vec![10, 11, 21, 32, 21]);
        assert_eq!(d.duration_s, Some(1.0));
        assert!(dedup(&UnitSequence::new("e", vec![])).units.is_empty());
        assert_eq!(dedup(&UnitSequence::new("r", vec![5, 5, 5, 5])).units, vec![5]);
    }

    #[test]
    fn bitrate_examples() {
        let c = vec![UnitSequence::new("a", vec![3; 10]).with_duration(1.0)];
        assert_eq!(bitrate(&c, false).unwrap(), 0.0);
        let c = vec![UnitSequence::new("a", (0..50).map(|i| i % 2).collect()).with_duration(1.0)];
        assert_eq!(bitrate(&c, false).unwrap(), 50.0);
        assert_eq!(bitrate(&c, true).unwrap(), 50.0);
        assert!(bitrate(&[UnitSequence::new("a", vec![1])], true).is_err());
        assert!(bitrate(&[], true).is_err());
    }

    #[test]
    fn codebook_file_roundtrip() {
        let cb = Codebook::from_centroids(&[vec![0.5, -1.0], vec![2.0, 3.25], vec![1.0, 1.0]], 42).unwrap();
        let back = decode_codebook(&encode_codebook(&cb)).unwrap();
        assert_eq!(back, cb);
        let bytes = encode_codebook(&cb);
        assert!(matches!(
            decode_codebook(&bytes[..bytes.len() - 3]),
            Err(FormatError::Truncated { .. })
        ));
        assert!(matches!(decode_codebook(b"GSLF...."), Err(FormatError::BadMagic { .. })));
    }

    proptest! {
        #[test]
        fn dedup_properties(units in prop::collection::vec(0u32..4, 0..40)) {
            let us = UnitSequence::new("u", units.clone());
            let d = dedup(&us);
            prop_assert!(d.units.windows(2).all(|w| w[0] != w[1]));
            prop_assert_eq!(&dedup(&d), &d);
            // First-of-run elements, in order.
            let firsts: Vec<u32> = units
                .iter()
                .enumerate()
                .filter(|(i, u)| *i == 0 || units[i - 1] != **u)
                .map(|(_, u)| *u)
                .collect();
            prop_assert_eq!(d.units, firsts);
        }

        #[test]
        fn bitrate_relabel_and_duration_scaling(
            seqs in prop::collection::vec((prop::collection::vec(0u32..6, 1..30), 0.1f64..5.0), 1..6),
            shift in 1u32..1000,
        ) {
            let corpus: Vec<UnitSequence> = seqs
                .iter()
                .enumerate()
                .map(|(i, (u, d))| UnitSequence::new(format!("{i}"), u.clone()).with_duration(*d))
                .collect();
            for post in [false, true] {
                let b = bitrate(&corpus, post).unwrap();
                // Injective relabelling (reversed order plus offset).
                let relabelled: Vec<UnitSequence> = corpus
                    .iter()
                    .map(|s| UnitSequence {
                        units: s.units.iter().map(|u| (5 - u) * 7 + shift).collect(),
                        ..s.clone()
                    })
                    .collect();
                prop_assert_eq!(bitrate(&relabelled, post).unwrap(), b);
                let doubled: Vec<UnitSequence> = corpus
                    .iter()
                    .map(|s| s.clone().with_duration(s.duration_s.unwrap() * 2.0))
                    .collect();
                prop_assert_eq!(bitrate(&doubled, post).unwrap(), b / 2.0);
            }
            let n_raw: usize = corpus.iter().map(UnitSequence::len).sum();
            let n_dedup: usize = corpus.iter().map(|s| dedup(s).len()).sum();
            prop_assert!(n_dedup <= n_raw);
        }

        #[test]
        fn encode_independent_of_order(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 1..20)) {
            let cb = Codebook::from_centroids(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![-2.0, 3.0]], 0).unwrap();
            let a = fm(&rows);
            let mut rev = rows.clone();
            rev.reverse();
            let b = fm(&rev);
            let mut eb = encode(&b, &cb).unwrap().units;
            eb.reverse();
            prop_assert_eq!(encode(&a, &cb).unwrap().units, eb);
        }
    }
}
