//! Temperature sweeps of a generator scored by a reference model, and
//! continuation-based temperature selection.

use rayon::prelude::*;
use serde::Serialize;

use super::bleu::{sentence_bleu, vert};
use super::curve::{SweepCurve, SweepPoint};
use crate::corpus::UnitSequence;
use crate::error::{Error, Result};
use crate::lm::NGramModel;
use crate::rng;

/// The sampling temperatures used for the quality/diversity curves.
pub const DEFAULT_GRID: [f64; 19] = [
    0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.7, 1.9, 2.1, 2.3, 2.5, 3.0,
];

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median per-utterance perplexity of `corpus` under `reference`.
pub fn corpus_perplexity<S: AsRef<[u32]>>(reference: &NGramModel, corpus: &[S]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::InsufficientData("perplexity of an empty corpus".into()));
    }
    Ok(median(
        corpus
            .iter()
            .map(|u| reference.score_default(u.as_ref()).perplexity)
            .collect(),
    ))
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("empty temperature grid"));
    }
    for (i, &t) in grid.iter().enumerate() {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::invalid(format!("temperature {t} must be positive")));
        }
        if i > 0 && t <= grid[i - 1] {
            return Err(Error::invalid("temperature grid must be strictly increasing"));
        }
    }
    Ok(())
}

/// Where sweep samples come from.
pub enum SampleSource<'a> {
    /// Sample from an n-gram model at each grid temperature.
    Model(&'a NGramModel),
    /// Pre-generated samples, one set per temperature, in grid order.
    External(&'a [(f64, Vec<UnitSequence>)]),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepParams {
    pub grid: Vec<f64>,
    pub samples_per_temp: usize,
    pub max_len: usize,
    pub seed: u64,
}

fn evaluate(reference: &NGramModel, t: f64, samples: Vec<&[u32]>) -> Result<SweepPoint> {
    let samples: Vec<&[u32]> = samples.into_iter().filter(|s| !s.is_empty()).collect();
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "temperature {t}: need at least 2 non-empty samples, got {}",
            samples.len()
        )));
    }
    Ok(SweepPoint {
        temperature: t,
        median_ppx: corpus_perplexity(reference, &samples)?,
        vert: vert(&samples, 2)?.vert,
        n_samples: samples.len(),
    })
}

/// Median PPX under `reference` and VERT of the samples at every
/// temperature. Empty samples are skipped. Sample `j` at grid index `i` uses
/// an RNG derived from `(seed, i, j)`, so the result does not depend on
/// thread count.
pub fn temperature_sweep(
    source: &SampleSource<'_>,
    reference: &NGramModel,
    params: &SweepParams,
    generator_id: &str,
    reference_id: &str,
) -> Result<SweepCurve> {
    let points: Vec<SweepPoint> = match source {
        SampleSource::Model(model) => {
            validate_grid(&params.grid)?;
            if params.samples_per_temp < 2 {
                return Err(Error::invalid("samples_per_temp must be >= 2"));
            }
            params
                .grid
                .par_iter()
                .enumerate()
                .map(|(i, &t)| {
                    let samples = (0..params.samples_per_temp)
                        .map(|j| {
                            let mut r = rng::derived(params.seed, &[i as u64, j as u64]);
                            model.sample_with_rng(t, params.max_len, None, &mut r)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    evaluate(reference, t, samples.iter().map(Vec::as_slice).collect())
                })
                .collect::<Result<_>>()?
        }
        SampleSource::External(sets) => {
            let grid: Vec<f64> = sets.iter().map(|(t, _)| *t).collect();
            validate_grid(&grid)?;
            sets.par_iter()
                .map(|(t, seqs)| evaluate(reference, *t, seqs.iter().map(|s| s.units.as_slice()).collect()))
                .collect::<Result<_>>()?
        }
    };
    SweepCurve::new(points, generator_id, reference_id)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuationReport {
    pub selected: f64,
    /// `(temperature, mean BLEU-2)` in grid order.
    pub mean_bleu: Vec<(f64, f64)>,
}

/// Picks the temperature whose continuations best match the references.
///
/// For every prompt, `n_continuations` continuations of the reference's
/// length are sampled at each temperature and scored by BLEU-2 against the
/// reference. The RNG for continuation `c` of prompt `p` is derived from
/// `(seed, p, c)` and is shared across temperatures. Ties go to the lower
/// temperature.
pub fn select_continuation_temperature(
    generator: &NGramModel,
    prompts: &[Vec<u32>],
    references: &[Vec<u32>],
    grid: &[f64],
    n_continuations: usize,
    seed: u64,
) -> Result<ContinuationReport> {
    if prompts.len() != references.len() {
        return Err(Error::DimensionMismatch {
            expected: prompts.len(),
            found: references.len(),
        });
    }
    if prompts.is_empty() {
        return Err(Error::InsufficientData("no prompts".into()));
    }
    if n_continuations == 0 {
        return Err(Error::invalid("n_continuations must be >= 1"));
    }
    validate_grid(grid)?;
    if let Some(i) = references.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("reference {i} is empty")));
    }
    let mean_bleu: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&t| {
            let mut total = 0.0;
            for (p, (prompt, reference)) in prompts.iter().zip(references).enumerate() {
                for c in 0..n_continuations {
                    let mut r = rng::derived(seed, &[p as u64, c as u64]);
                    let cont = generator.sample_with_rng(t, reference.len(), Some(prompt), &mut r)?;
                    total += sentence_bleu(&cont, &[reference], 2)?;
                }
            }
            Ok((t, total / (prompts.len() * n_continuations) as f64))
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, &(_, b)) in mean_bleu.iter().enumerate() {
        if b > mean_bleu[best].1 {
            best = i;
        }
    }
    Ok(ContinuationReport {
        selected: mean_bleu[best].0,
        mean_bleu,
    })
}
