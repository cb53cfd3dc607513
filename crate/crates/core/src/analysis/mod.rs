//! Post-run curve analysis: resampling, smoothing, derivatives,
//! equivalence points, half-equivalence pKa and replicate spread.

mod peaks;
mod pka;
mod replicate;
mod savgol;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use peaks::{find_equivalence_points, EquivalencePoint};
pub use pka::{compute_pka, PkaContext, PkaEntry};
pub use replicate::{stddev_vs_theory, StdDevSummary};
pub use savgol::savitzky_golay;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("bad Savitzky-Golay window {window} for order {order}")]
    BadWindow { window: usize, order: usize },
    #[error("grid is not uniform at index {index}")]
    NonUniformGrid { index: usize },
    #[error("volumes must be ascending (index {index})")]
    NotAscending { index: usize },
    #[error("half-equivalence volume {v_half} mL outside the curve range")]
    HalfPointOutOfRange { v_half: f64 },
    #[error("replicate grids differ")]
    GridMismatch,
    #[error("at least one equivalence point is required")]
    NoEquivalencePoint,
    #[error("derivative order must be 1 or 2, got {0}")]
    BadOrder(u8),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveMeta {
    pub analyte: String,
    pub titrant: String,
    pub replicate: u32,
}

/// A (volume mL, pH) series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TitrationCurve {
    pub points: Vec<(f64, f64)>,
    pub meta: CurveMeta,
}

impl TitrationCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Self {
        Self {
            points,
            meta: CurveMeta::default(),
        }
    }

    pub fn volumes(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    /// Linear interpolation at `v`; `None` outside the covered range.
    pub fn interpolate(&self, v: f64) -> Option<f64> {
        interpolate(&self.points, v)
    }
}

pub(crate) fn interpolate(points: &[(f64, f64)], v: f64) -> Option<f64> {
    let first = points.first()?;
    let last = points.last()?;
    if v < first.0 || v > last.0 {
        return None;
    }
    let i = points.partition_point(|p| p.0 < v);
    if i == 0 {
        return Some(first.1);
    }
    let (x0, y0) = points[i - 1];
    let (x1, y1) = points[i];
    if x1 == x0 {
        return Some(y1);
    }
    Some(y0 + (y1 - y0) * (v - x0) / (x1 - x0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub resample_step: f64,
    pub sg_window: usize,
    pub sg_order: usize,
    pub prominence_factor: f64,
    pub min_separation: f64,
    /// Peaks closer than this (mL) to the first sample are ignored.
    pub edge_exclusion: f64,
    pub stddev_half_width: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            resample_step: 0.05,
            sg_window: 11,
            sg_order: 3,
            prominence_factor: 5.0,
            min_separation: 2.0,
            edge_exclusion: 1.0,
            stddev_half_width: 2.0,
        }
    }
}

/// Collapses repeated volumes into their mean pH so the abscissa is
/// strictly ascending.
fn collapse_duplicates(points: &[(f64, f64)]) -> Result<Vec<(f64, f64)>, AnalysisError> {
    let mut out: Vec<(f64, f64, usize)> = Vec::with_capacity(points.len());
    for (i, &(v, y)) in points.iter().enumerate() {
        match out.last_mut() {
            Some(last) if v == last.0 => {
                last.1 += y;
                last.2 += 1;
            }
            Some(last) if v < last.0 => return Err(AnalysisError::NotAscending { index: i }),
            _ => out.push((v, y, 1)),
        }
    }
    Ok(out.into_iter().map(|(v, s, n)| (v, s / n as f64)).collect())
}

pub fn resample_uniform(curve: &TitrationCurve, step: f64) -> Result<TitrationCurve, AnalysisError> {
    if curve.points.len() < 4 {
        return Err(AnalysisError::TooFewPoints {
            need: 4,
            got: curve.points.len(),
        });
    }
    let pts = collapse_duplicates(&curve.points)?;
    if pts.len() < 2 {
        return Err(AnalysisError::TooFewPoints {
            need: 2,
            got: pts.len(),
        });
    }
    let first = pts[0].0;
    let last = pts[pts.len() - 1].0;
    let n = ((last - first) / step + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        let x = first + i as f64 * step;
        while j + 2 < pts.len() && pts[j + 1].0 < x {
            j += 1;
        }
        let (x0, y0) = pts[j];
        let (x1, y1) = pts[j + 1];
        let y = if x <= x0 {
            y0
        } else if x >= x1 {
            y1
        } else {
            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        };
        out.push((x, y));
    }
    Ok(TitrationCurve {
        points: out,
        meta: curve.meta.clone(),
    })
}

fn grid_step(xs: &[f64]) -> Result<f64, AnalysisError> {
    if xs.len() < 2 {
        return Err(AnalysisError::TooFewPoints {
            need: 2,
            got: xs.len(),
        });
    }
    let h = xs[1] - xs[0];
    if !(h > 0.0) {
        return Err(AnalysisError::NonUniformGrid { index: 1 });
    }
    for i in 2..xs.len() {
        let d = xs[i] - xs[i - 1];
        if (d - h).abs() > 1e-6 * h {
            return Err(AnalysisError::NonUniformGrid { index: i });
        }
    }
    Ok(h)
}

/// Finite-difference derivative of `points` (uniform abscissa): central
/// differences inside, second-order one-sided stencils at the edges.
pub fn derivative(points: &[(f64, f64)], order: u8) -> Result<Vec<(f64, f64)>, AnalysisError> {
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let n = y.len();
    let need = if order == 2 { 4 } else { 3 };
    if n < need {
        return Err(AnalysisError::TooFewPoints { need, got: n });
    }
    let h = grid_step(&xs)?;
    let d: Vec<f64> = match order {
        1 => (0..n)
            .map(|i| {
                if i == 0 {
                    (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * h)
                } else if i == n - 1 {
                    (3.0 * y[n - 1] - 4.0 * y[n - 2] + y[n - 3]) / (2.0 * h)
                } else {
                    (y[i + 1] - y[i - 1]) / (2.0 * h)
                }
            })
            .collect(),
        2 => (0..n)
            .map(|i| {
                if i == 0 {
                    (2.0 * y[0] - 5.0 * y[1] + 4.0 * y[2] - y[3]) / (h * h)
                } else if i == n - 1 {
                    (2.0 * y[n - 1] - 5.0 * y[n - 2] + 4.0 * y[n - 3] - y[n - 4]) / (h * h)
                } else {
                    (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (h * h)
                }
            })
            .collect(),
        o => return Err(AnalysisError::BadOrder(o)),
    };
    Ok(xs.into_iter().zip(d).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub resampled: TitrationCurve,
    pub smoothed: TitrationCurve,
    pub d1: Vec<(f64, f64)>,
    pub d2: Vec<(f64, f64)>,
    pub equivalence_points: Vec<EquivalencePoint>,
    pub pka: Vec<PkaEntry>,
}

/// The full pipeline: resample, smooth, differentiate, locate equivalence
/// points and read pKa values at the half-equivalence volumes.
pub fn analyze(
    curve: &TitrationCurve,
    config: &AnalysisConfig,
    pka_context: Option<&PkaContext>,
) -> Result<AnalysisResult, AnalysisError> {
    let resampled = resample_uniform(curve, config.resample_step)?;
    let smooth_y = savitzky_golay(&resampled.values(), config.sg_window, config.sg_order)?;
    let smoothed = TitrationCurve {
        points: resampled.volumes().into_iter().zip(smooth_y).collect(),
        meta: curve.meta.clone(),
    };
    let d1 = derivative(&smoothed.points, 1)?;
    let d2 = derivative(&smoothed.points, 2)?;
    let equivalence_points = find_equivalence_points(&smoothed.points, &d1, &d2, config);
    let pka = if equivalence_points.is_empty() {
        Vec::new()
    } else {
        compute_pka(&smoothed, &equivalence_points, pka_context)?
    };
    Ok(AnalysisResult {
        resampled,
        smoothed,
        d1,
        d2,
        equivalence_points,
        pka,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_preserves_uniform_nodes() {
        let pts: Vec<_> = (0..20).map(|i| (i as f64 * 0.05, (i as f64).sin())).collect();
        let r = resample_uniform(&TitrationCurve::new(pts.clone()), 0.05).unwrap();
        assert_eq!(r.points.len(), pts.len());
        for (a, b) in r.points.iter().zip(&pts) {
            assert!((a.1 - b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_needs_four_points() {
        let c = TitrationCurve::new(vec![(0.0, 1.0), (1.0, 2.0)]);
        assert!(matches!(
            resample_uniform(&c, 0.1),
            Err(AnalysisError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn resample_linear_exact() {
        let pts = vec![(0.0, 1.0), (0.3, 1.6), (1.1, 3.2), (2.0, 5.0)];
        let r = resample_uniform(&TitrationCurve::new(pts), 0.05).unwrap();
        for (x, y) in r.points {
            assert!((y - (1.0 + 2.0 * x)).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_of_linear_and_quadratic() {
        let lin: Vec<_> = (0..50).map(|i| (i as f64 * 0.1, 3.0 * i as f64 * 0.1 + 1.0)).collect();
        for (_, d) in derivative(&lin, 1).unwrap() {
            assert!((d - 3.0).abs() < 1e-10);
        }
        for (_, d) in derivative(&lin, 2).unwrap() {
            assert!(d.abs() < 1e-8);
        }
        let quad: Vec<_> = (0..50)
            .map(|i| {
                let x = i as f64 * 0.1;
                (x, 0.7 * x * x)
            })
            .collect();
        for (_, d) in derivative(&quad, 2).unwrap() {
            assert!((d - 1.4).abs() < 1e-8);
        }
    }

    #[test]
    fn non_uniform_grid_rejected() {
        let pts = vec![(0.0, 0.0), (0.1, 0.0), (0.3, 0.0), (0.4, 0.0)];
        assert!(matches!(
            derivative(&pts, 1),
            Err(AnalysisError::NonUniformGrid { .. })
        ));
    }
}
