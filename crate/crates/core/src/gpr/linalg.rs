//! Dense symmetric positive definite helpers over row-major `n x n` buffers.

use crate::error::{Error, Result};

/// Lower Cholesky factor, or `None` when a pivot is not strictly positive.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
            for k in 0..j {
                s -= ri[k] * rj[k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Jitter schedule relative to the mean diagonal: 0, then 1e-10 up to 1e-4.
pub const JITTER_STEPS: [f64; 8] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Factorizes `a + jitter * I`, escalating the jitter until it succeeds.
/// Returns the factor and the absolute jitter used.
pub fn cholesky_jittered(a: &[f64], n: usize) -> Result<(Vec<f64>, f64)> {
    let scale = (0..n).map(|i| a[i * n + i]).sum::<f64>() / n.max(1) as f64;
    let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
    let mut last = 0.0;
    for step in JITTER_STEPS {
        let jitter = step * scale;
        last = jitter;
        if let Some(l) = cholesky_with_diag(a, n, jitter) {
            return Ok((l, jitter));
        }
    }
    Err(Error::NotPositiveDefinite { jitter: last })
}

/// Factorizes `a + jitter * I`.
pub fn cholesky_with_diag(a: &[f64], n: usize, jitter: f64) -> Option<Vec<f64>> {
    if jitter == 0.0 {
        return cholesky(a, n);
    }
    let mut b = a.to_vec();
    for i in 0..n {
        b[i * n + i] += jitter;
    }
    cholesky(&b, n)
}

/// Solves `L y = b`.
pub fn solve_lower(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        let row = &l[i * n..i * n + i];
        let s: f64 = row.iter().zip(&y[..i]).map(|(a, b)| a * b).sum();
        y[i] = (y[i] - s) / l[i * n + i];
    }
    y
}

/// Solves `L^T x = y`.
pub fn solve_upper_t(l: &[f64], n: usize, y: &[f64]) -> Vec<f64> {
    let mut x = y.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Solves `(L L^T) x = b`.
pub fn cho_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    solve_upper_t(l, n, &solve_lower(l, n, b))
}

/// `(L L^T)^{-1}`, row-major.
pub fn cho_inverse(l: &[f64], n: usize) -> Vec<f64> {
    // L^{-1} column by column, then inv = L^{-T} L^{-1}.
    let mut linv = vec![0.0; n * n];
    for j in 0..n {
        linv[j * n + j] = 1.0 / l[j * n + j];
        for i in j + 1..n {
            let mut s = 0.0;
            for k in j..i {
                s += l[i * n + k] * linv[k * n + j];
            }
            linv[i * n + j] = -s / l[i * n + i];
        }
    }
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i..n {
                s += linv[k * n + i] * linv[k * n + j];
            }
            inv[i * n + j] = s;
            inv[j * n + i] = s;
        }
    }
    inv
}

pub fn log_det_from_cholesky(l: &[f64], n: usize) -> f64 {
    2.0 * (0..n).map(|i| l[i * n + i].ln()).sum::<f64>()
}
