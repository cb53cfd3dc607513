//! Savitzky–Golay smoothing by local least-squares polynomial fits.
//!
//! Interior points use the centered window. Near the edges the window is
//! shifted inward and the fit is evaluated off-center, so polynomials of
//! degree <= `order` are reproduced everywhere.

use super::AnalysisError;

/// Weights `h` such that `h · y[window]` is the fitted value at `pos`.
fn fit_weights(window: usize, order: usize, pos: usize) -> Vec<f64> {
    let m = order + 1;
    // Abscissae relative to the evaluation position, scaled to O(1).
    let scale = (window as f64 / 2.0).max(1.0);
    let xs: Vec<f64> = (0..window)
        .map(|j| (j as f64 - pos as f64) / scale)
        .collect();
    // Normal matrix A^T A (m x m).
    let mut ata = vec![vec![0.0; m]; m];
    for &x in &xs {
        let mut pows = vec![1.0; 2 * m - 1];
        for k in 1..pows.len() {
            pows[k] = pows[k - 1] * x;
        }
        for (r, row) in ata.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell += pows[r + c];
            }
        }
    }
    // Solve (A^T A) z = e0; the fitted value at pos is c0 = z^T A^T y.
    let mut rhs = vec![0.0; m];
    rhs[0] = 1.0;
    let z = solve(ata, rhs);
    xs.iter()
        .map(|&x| {
            let mut p = 1.0;
            let mut acc = 0.0;
            for zk in &z {
                acc += zk * p;
                p *= x;
            }
            acc
        })
        .collect()
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        a.swap(col, pivot);
        b.swap(col, pivot);
        let d = a[col][col];
        for row in col + 1..n {
            let f = a[row][col] / d;
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

pub fn savitzky_golay(series: &[f64], window: usize, order: usize) -> Result<Vec<f64>, AnalysisError> {
    if window.is_multiple_of(2) || order >= window {
        return Err(AnalysisError::BadWindow { window, order });
    }
    let n = series.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let (window, order) = if n < window {
        (n, order.min(n - 1))
    } else {
        (window, order)
    };
    let half = window / 2;
    let center = fit_weights(window, order, half);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (start, weights);
        let edge;
        if i < half {
            start = 0;
            edge = fit_weights(window, order, i);
            weights = &edge;
        } else if i + half >= n {
            start = n - window;
            edge = fit_weights(window, order, i - start);
            weights = &edge;
        } else {
            start = i - half;
            weights = &center;
        }
        let v: f64 = weights
            .iter()
            .zip(&series[start..start + window])
            .map(|(w, y)| w * y)
            .sum();
        out.push(v);
    }
    Ok(out)
}
