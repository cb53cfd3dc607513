use serde::{Deserialize, Serialize};

use super::{interpolate, AnalysisConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalencePoint {
    /// Refined volume (mL) at the second-derivative zero crossing.
    pub volume: f64,
    pub ph: f64,
    /// Grid volume of the first-derivative maximum.
    pub peak_volume: f64,
    pub peak_d1: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Zero crossing of `d2` within one grid step of index `i`.
fn refine(d2: &[(f64, f64)], i: usize) -> Option<f64> {
    let xi = d2[i].0;
    let lo = i.saturating_sub(1);
    let hi = (i + 1).min(d2.len() - 1);
    let mut best: Option<f64> = None;
    for j in lo..hi {
        let (x0, a) = d2[j];
        let (x1, b) = d2[j + 1];
        let crossing = if a == 0.0 {
            Some(x0)
        } else if (a > 0.0 && b <= 0.0) || (a < 0.0 && b >= 0.0) {
            Some(x0 + (x1 - x0) * a / (a - b))
        } else {
            None
        };
        if let Some(x) = crossing {
            if best.is_none_or(|bx| (x - xi).abs() < (bx - xi).abs()) {
                best = Some(x);
            }
        }
    }
    best
}

/// Height of `d1[i]` above the higher of its two bases, each base being the
/// lowest point before the series next rises above `d1[i]` (or ends).
fn prominence(d1: &[(f64, f64)], i: usize) -> f64 {
    let v = d1[i].1;
    let mut left = v;
    for p in d1[..i].iter().rev() {
        if p.1 > v {
            break;
        }
        left = left.min(p.1);
    }
    let mut right = v;
    for p in &d1[i + 1..] {
        if p.1 > v {
            break;
        }
        right = right.min(p.1);
    }
    v - left.max(right)
}

/// Local maxima of `d1` whose height and prominence both exceed
/// `prominence_factor × median|d1|`, refined to the nearest `d2` zero
/// crossing. Maxima within `edge_exclusion` of the first sample are
/// skipped; candidates closer than `min_separation` keep only the strongest.
pub fn find_equivalence_points(
    curve: &[(f64, f64)],
    d1: &[(f64, f64)],
    d2: &[(f64, f64)],
    config: &AnalysisConfig,
) -> Vec<EquivalencePoint> {
    let n = d1.len();
    if n < 3 || d2.len() != n {
        return Vec::new();
    }
    let threshold = config.prominence_factor * median(d1.iter().map(|p| p.1.abs()).collect());
    let start = d1[0].0 + config.edge_exclusion;
    let mut candidates: Vec<usize> = (1..n - 1)
        .filter(|&i| d1[i].0 >= start)
        .filter(|&i| {
            let v = d1[i].1;
            v > threshold && v >= d1[i - 1].1 && v > d1[i + 1].1 && prominence(d1, i) > threshold
        })
        .collect();
    candidates.sort_by(|&a, &b| d1[b].1.total_cmp(&d1[a].1).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept
            .iter()
            .all(|&k| (d1[k].0 - d1[c].0).abs() >= config.min_separation)
        {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept.into_iter()
        .map(|i| {
            let volume = refine(d2, i).unwrap_or(d1[i].0);
            let ph = interpolate(curve, volume).unwrap_or(curve[i].1);
            EquivalencePoint {
                volume,
                ph,
                peak_volume: d1[i].0,
                peak_d1: d1[i].1,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::derivative;

    fn logistic(mid: f64, k: f64) -> Vec<(f64, f64)> {
        (0..=800)
            .map(|i| {
                let x = i as f64 * 0.05;
                (x, 2.0 + 10.0 / (1.0 + (-(x - mid) * k).exp()))
            })
            .collect()
    }

    #[test]
    fn logistic_midpoint() {
        let c = logistic(17.33, 3.0);
        let d1 = derivative(&c, 1).unwrap();
        let d2 = derivative(&c, 2).unwrap();
        let eq = find_equivalence_points(&c, &d1, &d2, &AnalysisConfig::default());
        assert_eq!(eq.len(), 1);
        assert!((eq[0].volume - 17.33).abs() <= 0.05);
        assert!((eq[0].volume - eq[0].peak_volume).abs() <= 0.05 + 1e-12);
    }

    #[test]
    fn featureless_ramp() {
        let c: Vec<_> = (0..400).map(|i| (i as f64 * 0.05, 1.0 + 0.01 * i as f64)).collect();
        let d1 = derivative(&c, 1).unwrap();
        let d2 = derivative(&c, 2).unwrap();
        assert!(find_equivalence_points(&c, &d1, &d2, &AnalysisConfig::default()).is_empty());
    }
}
