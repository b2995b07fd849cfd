//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the library's numerical code.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Direct double-sum 8x8 DFT, `F[u][v] = sum I[m][n] exp(-2 pi i (um + vn) / 8)`.
/// Returns (re, im) pairs.
pub fn naive_dft(block: &[[f64; 8]; 8]) -> [[(f64, f64); 8]; 8] {
    let mut out = [[(0.0, 0.0); 8]; 8];
    for (u, row) in out.iter_mut().enumerate() {
        for (v, cell) in row.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for (m, brow) in block.iter().enumerate() {
                for (n, &x) in brow.iter().enumerate() {
                    let phase = -2.0 * std::f64::consts::PI * ((u * m + v * n) % 8) as f64 / 8.0;
                    re += x * phase.cos();
                    im += x * phase.sin();
                }
            }
            *cell = (re, im);
        }
    }
    out
}

/// Half-sample symmetric index reflection: `-1 -> 0`, `n -> n - 1`.
fn reflect(mut i: i64, n: i64) -> usize {
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// 7x7 Gaussian, sigma 7/6, normalized to unit sum.
pub fn window() -> [[f64; 7]; 7] {
    let s = 7.0 / 6.0;
    let mut w = [[0.0; 7]; 7];
    let mut total = 0.0;
    for (k, row) in w.iter_mut().enumerate() {
        for (l, v) in row.iter_mut().enumerate() {
            let (dk, dl) = (k as f64 - 3.0, l as f64 - 3.0);
            *v = (-(dk * dk + dl * dl) / (2.0 * s * s)).exp();
            total += *v;
        }
    }
    for row in w.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    w
}

/// Direct per-pixel local mean, local deviation and normalization.
pub fn naive_mscn(data: &[f64], width: usize, height: usize) -> Vec<f64> {
    let w = window();
    let at = |r: i64, c: i64| data[reflect(r, height as i64) * width + reflect(c, width as i64)];
    let mut out = vec![0.0; data.len()];
    for r in 0..height as i64 {
        for c in 0..width as i64 {
            let mut mu = 0.0;
            for k in -3..=3i64 {
                for l in -3..=3i64 {
                    mu += w[(k + 3) as usize][(l + 3) as usize] * at(r + k, c + l);
                }
            }
            let mut var = 0.0;
            for k in -3..=3i64 {
                for l in -3..=3i64 {
                    let d = at(r + k, c + l) - mu;
                    var += w[(k + 3) as usize][(l + 3) as usize] * d * d;
                }
            }
            out[r as usize * width + c as usize] = (at(r, c) - mu) / (var.sqrt() + 1.0);
        }
    }
    out
}

/// Manhattan distance of each cell from (4, 4).
pub fn band_counts() -> [usize; 4] {
    let mut counts = [0; 4];
    for u in 0..8i32 {
        for v in 0..8i32 {
            let d = (u - 4).abs() + (v - 4).abs();
            let b = match d {
                0 => 0,
                1..=3 => 1,
                4 => 2,
                _ => 3,
            };
            counts[b] += 1;
        }
    }
    counts
}

/// Standardize columns (population deviation), center targets, and return
/// the posterior mean at `queries` via a dense LU solve.
pub fn dense_gpr_mean(
    train: &[Vec<f64>],
    targets: &[f64],
    queries: &[Vec<f64>],
    sf2: f64,
    ell: f64,
    sn2: f64,
) -> Vec<f64> {
    let n = train.len();
    let d = train[0].len();
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for j in 0..d {
        mean[j] = train.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let v = train.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
        sd[j] = if v.sqrt() > 1e-12 * mean[j].abs().max(1.0) { v.sqrt() } else { 1.0 };
    }
    let z = |r: &[f64]| -> Vec<f64> { (0..d).map(|j| (r[j] - mean[j]) / sd[j]).collect() };
    let k = |a: &[f64], b: &[f64]| -> f64 {
        let r = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        sf2 * (-r / ell).exp()
    };
    let zt: Vec<Vec<f64>> = train.iter().map(|r| z(r)).collect();
    let gram = DMatrix::from_fn(n, n, |i, j| k(&zt[i], &zt[j]) + if i == j { sn2 } else { 0.0 });
    let ybar = targets.iter().sum::<f64>() / n as f64;
    let y = DVector::from_iterator(n, targets.iter().map(|t| t - ybar));
    let alpha = gram.lu().solve(&y).expect("nonsingular");
    queries
        .iter()
        .map(|q| {
            let zq = z(q);
            (0..n).map(|i| k(&zq, &zt[i]) * alpha[i]).sum::<f64>() + ybar
        })
        .collect()
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
}

/// Spearman correlation with ranks computed from scratch (no ties assumed).
pub fn spearman_no_ties(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        for (k, &i) in idx.iter().enumerate() {
            r[i] = k as f64;
        }
        r
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}
