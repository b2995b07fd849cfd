//! Agreement between predicted and subjective scores.
//!
//! SROCC uses mid-ranks for ties; KROCC is tau-b. PLCC and RMSE are taken
//! after a five-parameter logistic remapping of the predictions,
//! `f(x) = b1 (1/2 - 1 / (1 + exp(b2 (x - b3)))) + b4 x + b5`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fractional ranks (1-based), ties sharing the average rank.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn check_pair(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Structural(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < min {
        return Err(Error::InvalidArgument(format!("need at least {min} pairs, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// Pearson linear correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn srocc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 3)?;
    pearson(&midranks(x), &midranks(y))
}

/// Kendall tau-b over all pairs.
pub fn krocc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let n = x.len();
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].total_cmp(&x[j]) as i64;
            let dy = y[i].total_cmp(&y[j]) as i64;
            match (dx, dy) {
                (0, 0) => {}
                (0, _) => tie_x += 1,
                (_, 0) => tie_y += 1,
                _ if dx == dy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let nx = concordant + discordant + tie_y;
    let ny = concordant + discordant + tie_x;
    if nx == 0 || ny == 0 {
        return Err(Error::UndefinedCorrelation("all pairs tied"));
    }
    Ok((concordant - discordant) as f64 / ((nx as f64) * (ny as f64)).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub beta: [f64; 5],
}

impl LogisticParams {
    pub fn eval(&self, x: f64) -> f64 {
        let [b1, b2, b3, b4, b5] = self.beta;
        b1 * (0.5 - sigmoid_neg(b2 * (x - b3))) + b4 * x + b5
    }

    /// Partial derivatives of `eval` with respect to each beta.
    fn jacobian_row(&self, x: f64) -> [f64; 5] {
        let [b1, b2, b3, _, _] = self.beta;
        let s = sigmoid_neg(b2 * (x - b3));
        let ds = s * (1.0 - s);
        [0.5 - s, b1 * ds * (x - b3), -b1 * ds * b2, x, 1.0]
    }
}

/// `1 / (1 + exp(z))`, stable for large `|z|`.
#[inline]
fn sigmoid_neg(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub params: LogisticParams,
    pub converged: bool,
    pub iterations: usize,
    pub sse: f64,
}

const LM_MAX_ITER: usize = 500;

fn sse(p: &LogisticParams, x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (p.eval(*a) - b).powi(2)).sum()
}

/// Solves `a z = b` by Gaussian elimination with partial pivoting.
fn solve<const N: usize>(mut a: [[f64; N]; N], mut b: [f64; N]) -> Option<[f64; N]> {
    for col in 0..N {
        let piv = (col..N).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..N {
            let f = a[r][col] / a[col][col];
            for c in col..N {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut z = [0.0; N];
    for r in (0..N).rev() {
        let s: f64 = (r + 1..N).map(|c| a[r][c] * z[c]).sum();
        z[r] = (b[r] - s) / a[r][r];
    }
    z.iter().all(|v| v.is_finite()).then_some(z)
}

/// Replaces `b1, b4, b5` (which enter linearly) by their least-squares
/// optimum for the current `b2, b3`, if that lowers the cost.
fn project_linear(p: &mut LogisticParams, cost: &mut f64, x: &[f64], y: &[f64]) {
    let [_, b2, b3, _, _] = p.beta;
    let mut ata = [[0.0; 3]; 3];
    let mut aty = [0.0; 3];
    for (&xi, &yi) in x.iter().zip(y) {
        let row = [0.5 - sigmoid_neg(b2 * (xi - b3)), xi, 1.0];
        for a in 0..3 {
            aty[a] += row[a] * yi;
            for b in 0..3 {
                ata[a][b] += row[a] * row[b];
            }
        }
    }
    if let Some([b1, b4, b5]) = solve(ata, aty) {
        let cand = LogisticParams {
            beta: [b1, b2, b3, b4, b5],
        };
        let c = sse(&cand, x, y);
        if c.is_finite() && c < *cost {
            *p = cand;
            *cost = c;
        }
    }
}

/// Least-squares fit of the logistic mapping by Levenberg-Marquardt.
/// Never fails for lack of convergence; see [`LogisticFit::converged`].
pub fn fit_logistic(predicted: &[f64], subjective: &[f64]) -> Result<LogisticFit> {
    check_pair(predicted, subjective, 6)?;
    let n = predicted.len() as f64;
    let mx = predicted.iter().sum::<f64>() / n;
    let my = subjective.iter().sum::<f64>() / n;
    let sx = (predicted.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n).sqrt();
    let ymax = subjective.iter().cloned().fold(f64::MIN, f64::max);
    let ymin = subjective.iter().cloned().fold(f64::MAX, f64::min);
    let mut p = LogisticParams {
        beta: [ymax - ymin, if sx > 0.0 { 1.0 / sx } else { 1.0 }, mx, 0.0, my],
    };
    let mut cost = sse(&p, predicted, subjective);
    project_linear(&mut p, &mut cost, predicted, subjective);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let scale = 1.0 + subjective.iter().map(|v| v * v).sum::<f64>();

    for it in 0..LM_MAX_ITER {
        iterations = it + 1;
        let mut jtj = [[0.0; 5]; 5];
        let mut jtr = [0.0; 5];
        for (&x, &y) in predicted.iter().zip(subjective) {
            let j = p.jacobian_row(x);
            let r = y - p.eval(x);
            for a in 0..5 {
                jtr[a] += j[a] * r;
                for b in 0..5 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let grad_norm = jtr.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if cost <= 1e-30 * scale || grad_norm <= 1e-14 * scale {
            converged = true;
            break;
        }
        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for (k, row) in a.iter_mut().enumerate() {
                row[k] += lambda * (jtj[k][k].max(1e-12));
            }
            if let Some(step) = solve(a, jtr) {
                let mut cand = p;
                for (b, s) in cand.beta.iter_mut().zip(step) {
                    *b += s;
                }
                let c = sse(&cand, predicted, subjective);
                if c.is_finite() && c < cost {
                    let before = cost;
                    p = cand;
                    cost = c;
                    project_linear(&mut p, &mut cost, predicted, subjective);
                    let rel = (before - cost) / before.max(1e-300);
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = true;
                    if rel < 1e-15 {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            // No descent at any damping: a stationary point to working precision.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    Ok(LogisticFit {
        params: p,
        converged,
        iterations,
        sse: cost,
    })
}

/// PLCC and RMSE of the remapped predictions against the subjective scores.
pub fn plcc_rmse(predicted: &[f64], subjective: &[f64], params: &LogisticParams) -> Result<(f64, f64)> {
    check_pair(predicted, subjective, 2)?;
    let mapped: Vec<f64> = predicted.iter().map(|&x| params.eval(x)).collect();
    let plcc = pearson(&mapped, subjective)?;
    let mse = mapped.iter().zip(subjective).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / mapped.len() as f64;
    Ok((plcc, mse.sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub srocc: f64,
    pub plcc: f64,
    pub krocc: f64,
    pub rmse: f64,
    pub logistic: LogisticParams,
    pub logistic_converged: bool,
    pub n: usize,
    /// Set when a correlation was undefined (constant predictions) and the
    /// affected metrics were reported as 0.
    pub degenerate: bool,
}

impl EvalReport {
    /// One `key=value` per line.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "srocc={}", self.srocc).unwrap();
        writeln!(s, "plcc={}", self.plcc).unwrap();
        writeln!(s, "krocc={}", self.krocc).unwrap();
        writeln!(s, "rmse={}", self.rmse).unwrap();
        for (i, b) in self.logistic.beta.iter().enumerate() {
            writeln!(s, "beta{}={b}", i + 1).unwrap();
        }
        writeln!(s, "logistic_converged={}", self.logistic_converged).unwrap();
        writeln!(s, "n={}", self.n).unwrap();
        writeln!(s, "degenerate={}", self.degenerate).unwrap();
        s
    }
}

/// All four criteria. Undefined correlations are reported as 0 with
/// `degenerate` set, so long experiment loops never abort on them.
pub fn evaluate(predicted: &[f64], subjective: &[f64]) -> Result<EvalReport> {
    check_pair(predicted, subjective, 6)?;
    let mut degenerate = false;
    let mut or_zero = |r: Result<f64>| match r {
        Ok(v) => Ok(v),
        Err(Error::UndefinedCorrelation(_)) => {
            degenerate = true;
            Ok(0.0)
        }
        Err(e) => Err(e),
    };
    let srocc = or_zero(srocc(predicted, subjective))?;
    let krocc = or_zero(krocc(predicted, subjective))?;
    let fit = fit_logistic(predicted, subjective)?;
    let (plcc, rmse) = match plcc_rmse(predicted, subjective, &fit.params) {
        Ok(v) => v,
        Err(Error::UndefinedCorrelation(_)) => {
            degenerate = true;
            let n = subjective.len() as f64;
            let m = subjective.iter().sum::<f64>() / n;
            (0.0, (subjective.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt())
        }
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        srocc,
        plcc,
        krocc,
        rmse,
        logistic: fit.params,
        logistic_converged: fit.converged,
        n: predicted.len(),
        degenerate,
    })
}
