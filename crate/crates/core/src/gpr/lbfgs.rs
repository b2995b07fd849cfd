//! Box-constrained limited-memory BFGS with a projected backtracking search.

use std::collections::VecDeque;

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct Options {
    pub max_iter: usize,
    pub memory: usize,
    pub grad_tol: f64,
    pub rel_tol: f64,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            max_iter: 200,
            memory: 8,
            grad_tol: 1e-6,
            rel_tol: 1e-10,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, &l), &h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(l, h);
    }
}

/// Gradient with components zeroed where the bound blocks descent.
fn projected_gradient(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((&xi, &gi), (&l, &h))| {
            if (xi <= l && gi > 0.0) || (xi >= h && gi < 0.0) || l == h {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

/// Minimizes `f` over the box `[lo, hi]`. `f` returns `None` where it cannot
/// be evaluated; such points are treated as infinitely bad.
pub fn minimize<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: Options) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut fx, mut g) = f(&x)?;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..opts.max_iter {
        iterations = it + 1;
        let pg = projected_gradient(&x, &g, lo, hi);
        if pg.iter().all(|v| v.abs() <= opts.grad_tol) {
            converged = true;
            break;
        }

        // Two-loop recursion on the free coordinates.
        let mut q = pg.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = hist
            .back()
            .map(|(s, y, _)| dot(s, y) / dot(y, y))
            .unwrap_or_else(|| 1.0 / pg.iter().map(|v| v.abs()).fold(1.0, f64::max));
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut d: Vec<f64> = q.iter().zip(&pg).map(|(v, p)| if *p == 0.0 { 0.0 } else { -v }).collect();
        if dot(&d, &pg) >= 0.0 {
            hist.clear();
            d = pg.iter().map(|v| -v / pg.iter().map(|v| v.abs()).fold(1.0, f64::max)).collect();
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            project(&mut xn, lo, hi);
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            if step.iter().all(|v| *v == 0.0) {
                break;
            }
            if let Some((fnew, gnew)) = f(&xn) {
                if fnew.is_finite() && fnew <= fx + 1e-4 * dot(&g, &step) {
                    accepted = Some((xn, fnew, gnew, step));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gnew, s)) = accepted else {
            // Retry once from steepest descent before giving up.
            if !hist.is_empty() {
                hist.clear();
                continue;
            }
            break;
        };
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let change = (fx - fnew).abs();
        x = xn;
        fx = fnew;
        g = gnew;
        if change <= opts.rel_tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
    }
    Some(Minimum {
        x,
        value: fx,
        converged,
        iterations,
    })
}
