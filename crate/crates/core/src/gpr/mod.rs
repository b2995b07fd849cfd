//! Gaussian process regression with an isotropic exponential kernel.
//!
//! `k(x, y) = sf2 * exp(-|x - y| / l)` with observation noise `sn2`.
//! Features are standardized with training statistics and targets are
//! centered before fitting. Hyperparameters maximize the log marginal
//! likelihood over their logarithms, with random restarts.

pub mod lbfgs;
pub mod linalg;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use linalg::{cho_inverse, cho_solve, cholesky_jittered, cholesky_with_diag, log_det_from_cholesky, solve_lower};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub length_scale: f64,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn new(signal_variance: f64, length_scale: f64, noise_variance: f64) -> Result<Self> {
        let p = KernelParams {
            signal_variance,
            length_scale,
            noise_variance,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.signal_variance.is_finite()
            && self.signal_variance > 0.0
            && self.length_scale.is_finite()
            && self.length_scale > 0.0
            && self.noise_variance.is_finite()
            && self.noise_variance >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid kernel parameters {self:?}")))
        }
    }

    fn from_log(t: &[f64]) -> Self {
        KernelParams {
            signal_variance: t[0].exp(),
            length_scale: t[1].exp(),
            noise_variance: t[2].exp(),
        }
    }
}

#[inline]
fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[inline]
fn kernel_at(r: f64, p: &KernelParams) -> f64 {
    p.signal_variance * (-r / p.length_scale).exp()
}

pub fn kernel(x: &[f64], y: &[f64], p: &KernelParams) -> f64 {
    kernel_at(distance(x, y), p)
}

/// Row-major `n x d` matrix of training inputs.
fn pairwise_distances(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut r = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let v = distance(&x[i * d..(i + 1) * d], &x[j * d..(j + 1) * d]);
            r[i * n + j] = v;
            r[j * n + i] = v;
        }
    }
    r
}

fn gram(dist: &[f64], n: usize, p: &KernelParams) -> Vec<f64> {
    let mut k: Vec<f64> = dist.iter().map(|&r| kernel_at(r, p)).collect();
    for i in 0..n {
        k[i * n + i] += p.noise_variance;
    }
    k
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log evidence and its gradient with respect to
/// `(ln signal_variance, ln length_scale, ln noise_variance)`.
fn evidence(dist: &[f64], n: usize, y: &[f64], p: &KernelParams, want_grad: bool) -> Result<(f64, [f64; 3])> {
    let k = gram(dist, n, p);
    let (l, _) = cholesky_jittered(&k, n)?;
    let alpha = cho_solve(&l, n, y);
    let fit: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let value = -0.5 * fit - 0.5 * log_det_from_cholesky(&l, n) - 0.5 * n as f64 * LN_2PI;
    if !want_grad {
        return Ok((value, [0.0; 3]));
    }
    // d/dθ = 0.5 tr((α αᵀ - K⁻¹) dK/dθ)
    let kinv = cho_inverse(&l, n);
    let mut grad = [0.0; 3];
    for i in 0..n {
        for j in 0..n {
            let w = alpha[i] * alpha[j] - kinv[i * n + j];
            let e = kernel_at(dist[i * n + j], p);
            grad[0] += w * e;
            grad[1] += w * e * dist[i * n + j] / p.length_scale;
        }
        grad[2] += (alpha[i] * alpha[i] - kinv[i * n + i]) * p.noise_variance;
    }
    Ok((value, grad.map(|g| 0.5 * g)))
}

fn flatten<R: AsRef<[f64]>>(rows: &[R]) -> Result<(Vec<f64>, usize)> {
    let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
    let mut flat = Vec::with_capacity(rows.len() * d);
    for r in rows {
        let r = r.as_ref();
        if r.len() != d {
            return Err(Error::Structural(format!("row of length {} in {d}-dimensional input", r.len())));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        flat.extend_from_slice(r);
    }
    Ok((flat, d))
}

/// GP log marginal likelihood of `targets` under `params`, inputs used as given.
pub fn log_marginal_likelihood<R: AsRef<[f64]>>(features: &[R], targets: &[f64], params: &KernelParams) -> Result<f64> {
    log_marginal_likelihood_with_gradient(features, targets, params).map(|(v, _)| v)
}

/// As [`log_marginal_likelihood`], plus the gradient in log-parameter space.
pub fn log_marginal_likelihood_with_gradient<R: AsRef<[f64]>>(
    features: &[R],
    targets: &[f64],
    params: &KernelParams,
) -> Result<(f64, [f64; 3])> {
    params.validate()?;
    let (x, d) = flatten(features)?;
    let n = features.len();
    if targets.len() != n {
        return Err(Error::Structural(format!("{n} feature rows but {} targets", targets.len())));
    }
    evidence(&pairwise_distances(&x, n, d), n, targets, params, true)
}

/// Per-feature affine standardization learned on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Features that were constant in training; they use a unit divisor.
    pub constant: Vec<bool>,
}

impl Standardizer {
    pub fn fit(x: &[f64], n: usize, d: usize) -> Self {
        let mut mean = vec![0.0; d];
        let mut scale = vec![1.0; d];
        let mut constant = vec![false; d];
        for j in 0..d {
            let m = (0..n).map(|i| x[i * d + j]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (x[i * d + j] - m).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            mean[j] = m;
            if sd > 1e-12 * m.abs().max(1.0) {
                scale[j] = sd;
            } else {
                constant[j] = true;
            }
        }
        Standardizer { mean, scale, constant }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// How hyperparameters are chosen during [`fit`].
#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    /// Random restarts of the evidence maximization.
    pub restarts: usize,
    pub seed: u64,
    /// Skip optimization and use these exactly.
    pub fixed_params: Option<KernelParams>,
    /// Hold the noise variance at this value while optimizing the rest.
    pub fixed_noise: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 5,
            seed: 0,
            fixed_params: None,
            fixed_noise: None,
        }
    }
}

/// Posterior mean and variance at one input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GprModel {
    pub standardizer: Standardizer,
    pub dim: usize,
    /// Standardized training inputs, row-major `n x dim`.
    pub train_features: Vec<f64>,
    /// `[K + sn2 I]^{-1} (y - offset)`.
    pub alpha: Vec<f64>,
    pub params: KernelParams,
    pub target_offset: f64,
    /// Diagonal jitter that made the training Gram matrix factorizable.
    pub jitter: f64,
    pub log_marginal_likelihood: f64,
    #[serde(skip)]
    chol: Vec<f64>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fits a GP regressor to `n >= 2` rows of features and their targets.
pub fn fit<R: AsRef<[f64]>>(features: &[R], targets: &[f64], opts: &FitOptions) -> Result<GprModel> {
    let n = features.len();
    if n < 2 {
        return Err(Error::Fit(format!("need at least 2 training rows, got {n}")));
    }
    if targets.len() != n {
        return Err(Error::Structural(format!("{n} feature rows but {} targets", targets.len())));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite);
    }
    let (raw, d) = flatten(features)?;
    let standardizer = Standardizer::fit(&raw, n, d);
    let x: Vec<f64> = (0..n).flat_map(|i| standardizer.apply(&raw[i * d..(i + 1) * d])).collect();
    let dist = pairwise_distances(&x, n, d);

    let target_offset = targets.iter().sum::<f64>() / n as f64;
    let y: Vec<f64> = targets.iter().map(|t| t - target_offset).collect();

    let (params, lml) = match opts.fixed_params {
        Some(p) => {
            p.validate()?;
            let (v, _) = evidence(&dist, n, &y, &p, false)?;
            (p, v)
        }
        None => optimize(&dist, n, &y, opts)?,
    };

    let k = gram(&dist, n, &params);
    let (chol, jitter) = cholesky_jittered(&k, n)?;
    let alpha = cho_solve(&chol, n, &y);
    Ok(GprModel {
        standardizer,
        dim: d,
        train_features: x,
        alpha,
        params,
        target_offset,
        jitter,
        log_marginal_likelihood: lml,
        chol,
    })
}

fn optimize(dist: &[f64], n: usize, y: &[f64], opts: &FitOptions) -> Result<(KernelParams, f64)> {
    let var = y.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let var = if var > 0.0 { var } else { 1.0 };
    let mut off: Vec<f64> = (0..n).flat_map(|i| (0..i).map(move |j| dist[i * n + j])).collect();
    let med = median(&mut off);
    let med = if med > 0.0 { med } else { 1.0 };

    let mut lo = [(var * 1e-4).ln(), (med * 1e-3).ln(), (var * 1e-8).ln()];
    let mut hi = [(var * 1e4).ln(), (med * 1e3).ln(), (var * 10.0).ln()];
    if let Some(sn2) = opts.fixed_noise {
        if !(sn2.is_finite() && sn2 > 0.0) {
            return Err(Error::InvalidArgument(format!("fixed noise variance must be > 0, got {sn2}")));
        }
        lo[2] = sn2.ln();
        hi[2] = sn2.ln();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(KernelParams, f64)> = None;
    for _ in 0..opts.restarts.max(1) {
        let start = [
            (var * 10f64.powf(rng.random_range(-1.0..=1.0))).ln(),
            (med * 10f64.powf(rng.random_range(-1.0..=1.0))).ln(),
            match opts.fixed_noise {
                Some(s) => s.ln(),
                None => (var * 10f64.powf(rng.random_range(-4.0..=0.0))).ln(),
            },
        ];
        let objective = |t: &[f64]| {
            let p = KernelParams::from_log(t);
            evidence(dist, n, y, &p, true).ok().map(|(v, g)| (-v, g.iter().map(|x| -x).collect()))
        };
        let Some(m) = lbfgs::minimize(objective, &start, &lo, &hi, lbfgs::Options::default()) else {
            continue;
        };
        let p = KernelParams::from_log(&m.x);
        let value = -m.value;
        if best.is_none_or(|(_, b)| value > b) {
            best = Some((p, value));
        }
    }
    best.ok_or_else(|| Error::Fit("no restart produced a factorizable kernel matrix".into()))
}

impl GprModel {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.train_features[i * self.dim..(i + 1) * self.dim]
    }

    fn cross_kernel(&self, z: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| kernel(z, self.row(i), &self.params)).collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.dim {
            return Err(Error::Structural(format!("expected {} features, got {}", self.dim, x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let z = self.standardizer.apply(x);
        let ks = self.cross_kernel(&z);
        let mean = ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>() + self.target_offset;
        let v = solve_lower(&self.chol, self.len(), &ks);
        let variance = (self.params.signal_variance - v.iter().map(|a| a * a).sum::<f64>()).max(0.0);
        Ok(Prediction { mean, variance })
    }

    pub fn predict_many<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Vec<Prediction>> {
        rows.iter().map(|r| self.predict(r.as_ref())).collect()
    }

    /// Rebuilds the Cholesky factor after deserialization.
    fn refactor(&mut self) -> Result<()> {
        let n = self.len();
        if self.train_features.len() != n * self.dim {
            return Err(Error::Structural("training matrix does not match solve vector".into()));
        }
        self.params.validate()?;
        let dist = pairwise_distances(&self.train_features, n, self.dim);
        let k = gram(&dist, n, &self.params);
        self.chol = cholesky_with_diag(&k, n, self.jitter).ok_or(Error::NotPositiveDefinite { jitter: self.jitter })?;
        Ok(())
    }
}

pub const MODEL_FORMAT: &str = "freqiqa-gpr";
pub const MODEL_VERSION: u32 = 1;

/// Self-describing on-disk model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    /// Names the input layout, e.g. the feature vector version.
    pub feature_layout: String,
    pub kernel: String,
    pub model: GprModel,
}

impl ModelFile {
    pub fn new(model: GprModel, feature_layout: &str) -> Self {
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            feature_layout: feature_layout.into(),
            kernel: "exponential".into(),
            model,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let head: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::format(None, format!("model file: {e}")))?;
        let format = head.get("format").and_then(|v| v.as_str()).unwrap_or("");
        let version = head.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
        if format != MODEL_FORMAT || version != MODEL_VERSION as u64 {
            return Err(Error::Version {
                expected: format!("{MODEL_FORMAT} v{MODEL_VERSION}"),
                found: format!("{format} v{version}"),
            });
        }
        let mut file: ModelFile =
            serde_json::from_value(head).map_err(|e| Error::format(None, format!("model file: {e}")))?;
        file.model.refactor()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Fails unless the file was written for `layout`.
    pub fn expect_layout(&self, layout: &str) -> Result<()> {
        if self.feature_layout != layout {
            return Err(Error::Version {
                expected: layout.into(),
                found: self.feature_layout.clone(),
            });
        }
        Ok(())
    }
}
