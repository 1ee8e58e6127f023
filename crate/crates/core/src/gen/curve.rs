//! Quality/diversity curves, oracle anchors and the excess-area summary.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, FormatError, Result};

pub const CURVE_HEADER: &str = "temperature\tmedian_ppx\tvert\tn_samples";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub temperature: f64,
    pub median_ppx: f64,
    pub vert: f64,
    pub n_samples: usize,
}

/// Median perplexity and VERT as a function of sampling temperature.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCurve {
    points: Vec<SweepPoint>,
    pub generator: String,
    pub reference: String,
}

impl SweepCurve {
    pub fn new(
        points: Vec<SweepPoint>,
        generator: impl Into<String>,
        reference: impl Into<String>,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("a sweep curve needs at least one point"));
        }
        for (i, p) in points.iter().enumerate() {
            if !(p.temperature > 0.0 && p.temperature.is_finite()) {
                return Err(Error::invalid(format!("point {i}: temperature {} must be positive", p.temperature)));
            }
            if i > 0 && p.temperature <= points[i - 1].temperature {
                return Err(Error::invalid(format!("point {i}: temperatures must be strictly increasing")));
            }
            if !(p.median_ppx >= 1.0 && p.median_ppx.is_finite()) {
                return Err(Error::invalid(format!("point {i}: median_ppx {} must be >= 1", p.median_ppx)));
            }
            if !(0.0..=1.0).contains(&p.vert) {
                return Err(Error::invalid(format!("point {i}: vert {} outside [0, 1]", p.vert)));
            }
            if p.n_samples == 0 {
                return Err(Error::invalid(format!("point {i}: n_samples must be >= 1")));
            }
        }
        Ok(Self {
            points,
            generator: generator.into(),
            reference: reference.into(),
        })
    }

    pub fn points(&self) -> &[SweepPoint] {
        &self.points
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(CURVE_HEADER);
        out.push('\n');
        for p in &self.points {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", p.temperature, p.median_ppx, p.vert, p.n_samples);
        }
        out
    }

    /// Parses a TSV written by [`SweepCurve::to_tsv`]. Lines starting with
    /// `#` are ignored.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, h)) if h.trim_end() == CURVE_HEADER => {}
            Some((i, _)) => {
                return Err(FormatError::Line {
                    line: i + 1,
                    message: format!("expected header `{CURVE_HEADER}`"),
                }
                .into())
            }
            None => return Err(Error::InsufficientData("empty sweep file".into())),
        }
        let mut points = Vec::new();
        for (i, line) in lines {
            let bad = |message: String| FormatError::Line { line: i + 1, message };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 fields, found {}", fields.len())).into());
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| FormatError::BadToken { line: i + 1, token: s.to_string() })
            };
            points.push(SweepPoint {
                temperature: num(fields[0])?,
                median_ppx: num(fields[1])?,
                vert: num(fields[2])?,
                n_samples: fields[3]
                    .trim()
                    .parse()
                    .map_err(|_| FormatError::BadToken { line: i + 1, token: fields[3].to_string() })?,
            });
        }
        Self::new(points, "", "")
    }
}

/// PPX and VERT of real (oracle) text under the reference model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OraclePoint {
    pub ppx: f64,
    pub vert: f64,
}

impl OraclePoint {
    pub fn new(ppx: f64, vert: f64) -> Result<Self> {
        if !(ppx >= 1.0 && ppx.is_finite()) {
            return Err(Error::invalid(format!("oracle PPX {ppx} must be finite and >= 1")));
        }
        if !(vert > 0.0 && vert <= 1.0) {
            return Err(Error::invalid(format!("oracle VERT {vert} must lie in (0, 1]")));
        }
        Ok(Self { ppx, vert })
    }
}

/// Temperatures where the curve meets the oracle's PPX and VERT, and the
/// curve's other coordinate at those temperatures. `None` means the
/// crossing is not bracketed by the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Anchors {
    pub t_at_oracle_ppx: Option<f64>,
    pub t_at_oracle_vert: Option<f64>,
    pub ppx_at_oracle_vert: Option<f64>,
    pub vert_at_oracle_ppx: Option<f64>,
}

/// First temperature at which the piecewise-linear `(t, v)` series reaches
/// `target`.
fn crossing(ts: &[f64], vs: &[f64], target: f64) -> Option<f64> {
    for i in 0..ts.len() {
        if vs[i] == target {
            return Some(ts[i]);
        }
        if i + 1 < ts.len() && (vs[i] - target) * (vs[i + 1] - target) < 0.0 {
            let frac = (target - vs[i]) / (vs[i + 1] - vs[i]);
            return Some(ts[i] + frac * (ts[i + 1] - ts[i]));
        }
    }
    None
}

/// Piecewise-linear value of the series at `t`, which must lie on the grid span.
fn value_at(ts: &[f64], vs: &[f64], t: f64) -> f64 {
    let i = ts.partition_point(|&x| x <= t);
    if i == 0 {
        return vs[0];
    }
    if i == ts.len() {
        return vs[ts.len() - 1];
    }
    let (t0, t1) = (ts[i - 1], ts[i]);
    if t == t0 {
        return vs[i - 1];
    }
    vs[i - 1] + (t - t0) / (t1 - t0) * (vs[i] - vs[i - 1])
}

struct Series {
    ts: Vec<f64>,
    ppx: Vec<f64>,
    log_ppx: Vec<f64>,
    vert: Vec<f64>,
}

impl Series {
    fn of(curve: &SweepCurve) -> Self {
        let p = curve.points();
        Self {
            ts: p.iter().map(|p| p.temperature).collect(),
            ppx: p.iter().map(|p| p.median_ppx).collect(),
            log_ppx: p.iter().map(|p| p.median_ppx.ln()).collect(),
            vert: p.iter().map(|p| p.vert).collect(),
        }
    }

    fn ppx_at(&self, t: f64) -> f64 {
        if let Some(i) = self.ts.iter().position(|&x| x == t) {
            return self.ppx[i];
        }
        value_at(&self.ts, &self.log_ppx, t).exp()
    }

    fn vert_at(&self, t: f64) -> f64 {
        value_at(&self.ts, &self.vert, t)
    }
}

/// Locates the oracle anchors. PPX is interpolated linearly in log space,
/// VERT linearly.
pub fn find_anchors(curve: &SweepCurve, oracle: &OraclePoint) -> Result<Anchors> {
    if curve.points().len() < 2 {
        return Err(Error::InsufficientData("anchors need a curve of at least 2 points".into()));
    }
    let s = Series::of(curve);
    let t_ppx = crossing(&s.ts, &s.log_ppx, oracle.ppx.ln());
    let t_vert = crossing(&s.ts, &s.vert, oracle.vert);
    Ok(Anchors {
        t_at_oracle_ppx: t_ppx,
        t_at_oracle_vert: t_vert,
        ppx_at_oracle_vert: t_vert.map(|t| s.ppx_at(t)),
        vert_at_oracle_ppx: t_ppx.map(|t| s.vert_at(t)),
    })
}

/// Integral of `max(g, 0) dx` along the straight segment from `(x0, g0)` to
/// `(x1, g1)`, exact for a linear `g`.
fn positive_part(x0: f64, g0: f64, x1: f64, g1: f64) -> f64 {
    let dx = x1 - x0;
    if g0 >= 0.0 && g1 >= 0.0 {
        dx * (g0 + g1) / 2.0
    } else if g0 <= 0.0 && g1 <= 0.0 {
        0.0
    } else {
        let s = g0 / (g0 - g1);
        if g0 > 0.0 {
            dx * s * g0 / 2.0
        } else {
            dx * (1.0 - s) * g1 / 2.0
        }
    }
}

/// Excess area of the curve above the oracle VERT, between the two anchors,
/// on axes normalized by the oracle values (`x = PPX / ppx_o`,
/// `y = VERT / vert_o`). The curve is walked from the PPX anchor to the VERT
/// anchor through the grid points between them. Negative net area is
/// clamped to 0.
pub fn auc_between_anchors(curve: &SweepCurve, oracle: &OraclePoint) -> Result<f64> {
    let a = find_anchors(curve, oracle)?;
    let (Some(t0), Some(t1)) = (a.t_at_oracle_ppx, a.t_at_oracle_vert) else {
        let which = match (a.t_at_oracle_ppx, a.t_at_oracle_vert) {
            (None, None) => "both anchors",
            (None, _) => "the PPX anchor",
            _ => "the VERT anchor",
        };
        return Err(Error::NotComputable(format!("{which} not bracketed by the grid; report AUC as NOT-COMPUTABLE")));
    };
    let s = Series::of(curve);
    let mut path = vec![(1.0, s.vert_at(t0) / oracle.vert)];
    let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
    let interior = curve
        .points()
        .iter()
        .filter(|p| p.temperature > lo && p.temperature < hi)
        .map(|p| (p.median_ppx / oracle.ppx, p.vert / oracle.vert));
    if t0 <= t1 {
        path.extend(interior);
    } else {
        let mut v: Vec<_> = interior.collect();
        v.reverse();
        path.extend(v);
    }
    path.push((s.ppx_at(t1) / oracle.ppx, 1.0));
    let area: f64 = path
        .windows(2)
        .map(|w| positive_part(w[0].0, w[0].1 - 1.0, w[1].0, w[1].1 - 1.0))
        .sum();
    Ok(area.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(pts: &[(f64, f64, f64)]) -> SweepCurve {
        SweepCurve::new(
            pts.iter()
                .map(|&(t, p, v)| SweepPoint {
                    temperature: t,
                    median_ppx: p,
                    vert: v,
                    n_samples: 10,
                })
                .collect(),
            "g",
            "r",
        )
        .unwrap()
    }

    #[test]
    fn exact_grid_hit() {
        let c = curve(&[(0.7, 50.0, 0.4), (0.9, 100.0, 0.2), (1.1, 200.0, 0.1)]);
        let a = find_anchors(&c, &OraclePoint::new(100.0, 0.2).unwrap()).unwrap();
        assert_eq!(a.t_at_oracle_ppx, Some(0.9));
        assert_eq!(a.t_at_oracle_vert, Some(0.9));
        assert_eq!(a.ppx_at_oracle_vert, Some(100.0));
        assert_eq!(a.vert_at_oracle_ppx, Some(0.2));
        assert_eq!(auc_between_anchors(&c, &OraclePoint::new(100.0, 0.2).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn interpolated_crossings() {
        // log PPX is linear in t: ln ppx = t * ln 100, so ppx = 10 at t = 0.5.
        let c = curve(&[(0.0 + 0.25, 100f64.powf(0.25), 0.5), (1.0, 100.0, 0.2)]);
        let a = find_anchors(&c, &OraclePoint::new(10.0, 0.3).unwrap()).unwrap();
        assert!((a.t_at_oracle_ppx.unwrap() - 0.5).abs() < 1e-12);
        // VERT falls linearly from 0.5 to 0.2: 0.3 at t = 0.25 + 0.75 * 2/3 = 0.75.
        assert!((a.t_at_oracle_vert.unwrap() - 0.75).abs() < 1e-12);
        assert!((a.vert_at_oracle_ppx.unwrap() - 0.4).abs() < 1e-12);
        assert!((a.ppx_at_oracle_vert.unwrap() - 100f64.powf(0.75)).abs() < 1e-9);
    }

    #[test]
    fn unbracketed_is_not_computable() {
        let c = curve(&[(0.5, 20.0, 0.5), (1.0, 40.0, 0.2)]);
        let o = OraclePoint::new(10.0, 0.3).unwrap();
        let a = find_anchors(&c, &o).unwrap();
        assert_eq!(a.t_at_oracle_ppx, None);
        assert_eq!(a.vert_at_oracle_ppx, None);
        assert!(a.t_at_oracle_vert.is_some());
        assert!(matches!(auc_between_anchors(&c, &o), Err(Error::NotComputable(_))));
        assert!(find_anchors(&curve(&[(1.0, 2.0, 0.5)]), &o).is_err());
    }

    #[test]
    fn triangle_area() {
        // Normalized path (1, 1.5) -> (1.5, 1): area 0.5 * 0.5 * 0.5.
        let c = curve(&[(0.5, 100.0, 0.3), (1.0, 150.0, 0.2)]);
        let o = OraclePoint::new(100.0, 0.2).unwrap();
        assert!((auc_between_anchors(&c, &o).unwrap() - 0.125).abs() < 1e-12);
    }

    #[test]
    fn negative_excursion_contributes_nothing() {
        let c = curve(&[(0.5, 100.0, 0.2), (0.75, 120.0, 0.1), (1.0, 150.0, 0.2)]);
        let o = OraclePoint::new(100.0, 0.2).unwrap();
        assert_eq!(auc_between_anchors(&c, &o).unwrap(), 0.0);
    }

    #[test]
    fn tsv_roundtrip_and_validation() {
        let c = curve(&[(0.3, 12.5, 0.25), (0.4, 13.0, 0.125)]);
        let back = SweepCurve::from_tsv(&c.to_tsv()).unwrap();
        assert_eq!(back.points(), c.points());
        assert!(SweepCurve::from_tsv("bogus\n").is_err());
        let bad = vec![
            SweepPoint { temperature: 1.0, median_ppx: 2.0, vert: 0.5, n_samples: 1 },
            SweepPoint { temperature: 1.0, median_ppx: 2.0, vert: 0.5, n_samples: 1 },
        ];
        assert!(SweepCurve::new(bad, "", "").is_err());
        assert!(OraclePoint::new(0.5, 0.2).is_err());
        assert!(OraclePoint::new(5.0, 0.0).is_err());
    }
}
