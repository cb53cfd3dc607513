use serde::{Deserialize, Serialize};

use super::{interpolate, AnalysisError, TitrationCurve};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StdDevSummary {
    /// (V, σ) on the common grid.
    pub series: Vec<(f64, f64)>,
    pub plateau_min: f64,
    pub plateau_median: f64,
    pub plateau_mean: f64,
    pub plateau_max: f64,
    pub transition_max: f64,
    pub transition_max_volume: f64,
}

/// Per-volume sample standard deviation of `measured − theory` across
/// replicates. Volumes within `half_width` of any entry of `v_eq` form the
/// transition window; everything else is plateau.
pub fn stddev_vs_theory(
    replicates: &[TitrationCurve],
    theory: &[(f64, f64)],
    v_eq: &[f64],
    half_width: f64,
) -> Result<StdDevSummary, AnalysisError> {
    if replicates.len() < 2 {
        return Err(AnalysisError::TooFewPoints {
            need: 2,
            got: replicates.len(),
        });
    }
    let grid = replicates[0].volumes();
    for r in &replicates[1..] {
        if r.points.len() != grid.len()
            || r.points.iter().zip(&grid).any(|(p, v)| (p.0 - v).abs() > 1e-9)
        {
            return Err(AnalysisError::GridMismatch);
        }
    }
    let n = replicates.len() as f64;
    let mut series = Vec::with_capacity(grid.len());
    for (i, &v) in grid.iter().enumerate() {
        let th = interpolate(theory, v).ok_or(AnalysisError::GridMismatch)?;
        let devs: Vec<f64> = replicates.iter().map(|r| r.points[i].1 - th).collect();
        let mean = devs.iter().sum::<f64>() / n;
        let var = devs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        series.push((v, var.sqrt()));
    }
    let in_transition = |v: f64| v_eq.iter().any(|e| (v - e).abs() <= half_width);
    let mut plateau: Vec<f64> = series
        .iter()
        .filter(|p| !in_transition(p.0))
        .map(|p| p.1)
        .collect();
    plateau.sort_by(f64::total_cmp);
    let (plateau_min, plateau_median, plateau_mean, plateau_max) = if plateau.is_empty() {
        (0.0, 0.0, 0.0, 0.0)
    } else {
        let m = plateau.len();
        let median = if m % 2 == 1 {
            plateau[m / 2]
        } else {
            0.5 * (plateau[m / 2 - 1] + plateau[m / 2])
        };
        (
            plateau[0],
            median,
            plateau.iter().sum::<f64>() / m as f64,
            plateau[m - 1],
        )
    };
    let (transition_max_volume, transition_max) = series
        .iter()
        .filter(|p| in_transition(p.0))
        .fold((f64::NAN, 0.0), |acc, p| if p.1 > acc.1 || acc.0.is_nan() { *p } else { acc });
    Ok(StdDevSummary {
        series,
        plateau_min,
        plateau_median,
        plateau_mean,
        plateau_max,
        transition_max,
        transition_max_volume,
    })
}
