//! Train/test protocols: repeated content-separated splits with median
//! reporting, cross-database evaluation, single-feature ablation and
//! extraction timing.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distort::cell_seed;
use crate::error::{Error, Result};
use crate::features::{extract, ExtractConfig, FeatureVector, NUM_FEATURES};
use crate::gpr::{fit, FitOptions};
use crate::imagio::{load_gray, GrayImage, Manifest};
use crate::metrics::{evaluate, EvalReport};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitUnit {
    /// Whole reference contents go to one side.
    #[default]
    ByContent,
    /// Plain sample shuffle; leaks content across the split.
    BySample,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub iterations: usize,
    pub seed: u64,
    pub split_unit: SplitUnit,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            iterations: 1000,
            seed: 0,
            split_unit: SplitUnit::ByContent,
        }
    }
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Sample indices on each side of a split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// `ceil(fraction * n)`, tolerant of representation error in the product.
pub fn train_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Randomized partition for one iteration, seeded by `seed ^ iteration`.
pub fn split(manifest: &Manifest, spec: &SplitSpec, iteration: u64) -> Result<Split> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ iteration);
    let (train, test) = match spec.split_unit {
        SplitUnit::ByContent => {
            manifest.validate()?;
            let mut contents = manifest.contents();
            contents.shuffle(&mut rng);
            let k = train_count(spec.train_fraction, contents.len());
            let train_ids: HashSet<&str> = contents[..k.min(contents.len())].iter().copied().collect();
            (0..manifest.samples.len()).partition(|&i| train_ids.contains(manifest.samples[i].content_id.as_str()))
        }
        SplitUnit::BySample => {
            let mut idx: Vec<usize> = (0..manifest.samples.len()).collect();
            idx.shuffle(&mut rng);
            let k = train_count(spec.train_fraction, idx.len()).min(idx.len());
            let test = idx.split_off(k);
            let mut train = idx;
            train.sort_unstable();
            let mut test = test;
            test.sort_unstable();
            (train, test)
        }
    };
    if train.is_empty() || test.is_empty() {
        return Err(Error::Split(format!(
            "split leaves {} training and {} test samples",
            train.len(),
            test.len()
        )));
    }
    Ok(Split { train, test })
}

/// Features of every manifest sample, extracted once.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub features: Vec<FeatureVector>,
    /// Wall-clock seconds spent in extraction for each image.
    pub seconds: Vec<f64>,
}

impl FeatureTable {
    pub fn mean_seconds(&self) -> f64 {
        self.seconds.iter().sum::<f64>() / self.seconds.len().max(1) as f64
    }
}

/// Loads every image first (failing with the full list of unreadable
/// paths), then extracts features in parallel.
pub fn extract_all(manifest: &Manifest, cfg: &ExtractConfig) -> Result<FeatureTable> {
    let images = load_all(manifest)?;
    let out = images
        .par_iter()
        .map(|img| {
            let t = Instant::now();
            let f = extract(img, cfg)?;
            Ok((f, t.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (features, seconds) = out.into_iter().unzip();
    Ok(FeatureTable { features, seconds })
}

fn load_all(manifest: &Manifest) -> Result<Vec<GrayImage>> {
    let loaded: Vec<_> = manifest.samples.par_iter().map(|s| load_gray(&s.image_path)).collect();
    let mut failures = Vec::new();
    let mut images = Vec::with_capacity(loaded.len());
    for (s, r) in manifest.samples.iter().zip(loaded) {
        match r {
            Ok(img) => images.push(img),
            Err(e) => failures.push((s.image_path.clone(), e.to_string())),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Unloadable(failures));
    }
    Ok(images)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOptions {
    pub extract: ExtractConfig,
    pub restarts: usize,
    /// 0-based feature indices fed to the regressor; `None` uses all 24.
    pub feature_subset: Option<Vec<usize>>,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            extract: ExtractConfig::default(),
            restarts: 5,
            feature_subset: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub iterations: Vec<EvalReport>,
    pub median_srocc: f64,
    pub median_plcc: f64,
    pub median_krocc: f64,
    pub median_rmse: f64,
    /// Iterations whose metrics were undefined and reported as 0.
    pub degenerate_iterations: usize,
    pub extraction_seconds_per_image: f64,
}

impl ExperimentResult {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<8} {:>10}", "metric", "median").unwrap();
        for (k, v) in [
            ("SROCC", self.median_srocc),
            ("PLCC", self.median_plcc),
            ("KROCC", self.median_krocc),
            ("RMSE", self.median_rmse),
        ] {
            writeln!(s, "{k:<8} {v:>10.4}").unwrap();
        }
        writeln!(s, "iterations {} (degenerate {})", self.iterations.len(), self.degenerate_iterations).unwrap();
        writeln!(s, "extraction {:.4} s/image", self.extraction_seconds_per_image).unwrap();
        s
    }
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

fn select(f: &FeatureVector, subset: Option<&[usize]>) -> Vec<f64> {
    match subset {
        None => f.0.to_vec(),
        Some(idx) => idx.iter().map(|&k| f.0[k]).collect(),
    }
}

fn fit_and_evaluate(
    train_x: Vec<Vec<f64>>,
    train_y: &[f64],
    test_x: Vec<Vec<f64>>,
    test_y: &[f64],
    restarts: usize,
    seed: u64,
) -> Result<EvalReport> {
    let opts = FitOptions {
        restarts,
        seed,
        ..FitOptions::default()
    };
    let model = fit(&train_x, train_y, &opts)?;
    let pred: Vec<f64> = model.predict_many(&test_x)?.iter().map(|p| p.mean).collect();
    evaluate(&pred, test_y)
}

/// Runs the repeated-split protocol on precomputed features.
pub fn run_on_features(
    manifest: &Manifest,
    table: &FeatureTable,
    spec: &SplitSpec,
    opts: &ExperimentOptions,
) -> Result<ExperimentResult> {
    spec.validate()?;
    if table.features.len() != manifest.samples.len() {
        return Err(Error::Structural("feature table does not match manifest".into()));
    }
    let subset = opts.feature_subset.as_deref();
    if let Some(s) = subset {
        if s.is_empty() || s.iter().any(|&k| k >= NUM_FEATURES) {
            return Err(Error::InvalidArgument(format!("invalid feature subset {s:?}")));
        }
    }
    let scores = manifest.scores();
    let reports = (0..spec.iterations as u64)
        .into_par_iter()
        .map(|it| {
            let sp = split(manifest, spec, it)?;
            let gather = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
                idx.iter().map(|&i| (select(&table.features[i], subset), scores[i])).unzip()
            };
            let (tx, ty) = gather(&sp.train);
            let (vx, vy) = gather(&sp.test);
            fit_and_evaluate(tx, &ty, vx, &vy, opts.restarts, cell_seed(spec.seed, 0, it as usize))
        })
        .collect::<Result<Vec<_>>>()?;
    let col = |f: fn(&EvalReport) -> f64| median(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(ExperimentResult {
        median_srocc: col(|r| r.srocc),
        median_plcc: col(|r| r.plcc),
        median_krocc: col(|r| r.krocc),
        median_rmse: col(|r| r.rmse),
        degenerate_iterations: reports.iter().filter(|r| r.degenerate).count(),
        extraction_seconds_per_image: table.mean_seconds(),
        iterations: reports,
    })
}

/// Extracts features once, then runs the repeated-split protocol.
pub fn run_experiment(manifest: &Manifest, spec: &SplitSpec, opts: &ExperimentOptions) -> Result<ExperimentResult> {
    spec.validate()?;
    manifest.validate()?;
    let table = extract_all(manifest, &opts.extract)?;
    run_on_features(manifest, &table, spec, opts)
}

/// Trains on every sample of one database and tests on every sample of another.
pub fn cross_database_on_features(
    train: (&Manifest, &FeatureTable),
    test: (&Manifest, &FeatureTable),
    seed: u64,
    opts: &ExperimentOptions,
) -> Result<EvalReport> {
    let subset = opts.feature_subset.as_deref();
    let rows = |t: &FeatureTable| -> Vec<Vec<f64>> { t.features.iter().map(|f| select(f, subset)).collect() };
    fit_and_evaluate(
        rows(train.1),
        &train.0.scores(),
        rows(test.1),
        &test.0.scores(),
        opts.restarts,
        seed,
    )
}

pub fn cross_database(train: &Manifest, test: &Manifest, seed: u64, opts: &ExperimentOptions) -> Result<EvalReport> {
    let tt = extract_all(train, &opts.extract)?;
    let vt = extract_all(test, &opts.extract)?;
    cross_database_on_features((train, &tt), (test, &vt), seed, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    /// 1-based feature number.
    pub feature: usize,
    pub median_srocc: f64,
    pub degenerate_iterations: usize,
}

/// Repeats the protocol with each single feature in turn.
pub fn feature_ablation_on_features(
    manifest: &Manifest,
    table: &FeatureTable,
    spec: &SplitSpec,
    opts: &ExperimentOptions,
) -> Result<Vec<AblationEntry>> {
    (0..NUM_FEATURES)
        .map(|k| {
            let o = ExperimentOptions {
                feature_subset: Some(vec![k]),
                ..opts.clone()
            };
            let r = run_on_features(manifest, table, spec, &o)?;
            Ok(AblationEntry {
                feature: k + 1,
                median_srocc: r.median_srocc,
                degenerate_iterations: r.degenerate_iterations,
            })
        })
        .collect()
}

pub fn feature_ablation(manifest: &Manifest, spec: &SplitSpec, opts: &ExperimentOptions) -> Result<Vec<AblationEntry>> {
    manifest.validate()?;
    let table = extract_all(manifest, &opts.extract)?;
    feature_ablation_on_features(manifest, &table, spec, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub samples: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub variance: f64,
}

impl TimingStats {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let variance = if samples.len() > 1 {
            samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        TimingStats {
            mean,
            median: median(&samples),
            min: samples.iter().cloned().fold(f64::INFINITY, f64::min),
            variance,
            samples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub per_image: Vec<(String, TimingStats)>,
    /// Statistics over the per-image mean times.
    pub overall: TimingStats,
    pub threads: usize,
}

/// Times `extract` on each image `repeat` times on a single thread.
/// Decoding is excluded from the measurement.
pub fn benchmark_images(images: &[(String, GrayImage)], repeat: usize, cfg: &ExtractConfig) -> Result<BenchReport> {
    if repeat == 0 {
        return Err(Error::InvalidArgument("repeat must be >= 1".into()));
    }
    if images.is_empty() {
        return Err(Error::InvalidArgument("nothing to benchmark".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    pool.install(|| {
        let mut per_image = Vec::with_capacity(images.len());
        for (name, img) in images {
            let mut samples = Vec::with_capacity(repeat);
            for _ in 0..repeat {
                let t = Instant::now();
                std::hint::black_box(extract(std::hint::black_box(img), cfg)?);
                samples.push(t.elapsed().as_secs_f64());
            }
            per_image.push((name.clone(), TimingStats::from_samples(samples)));
        }
        let overall = TimingStats::from_samples(per_image.iter().map(|(_, s)| s.mean).collect());
        Ok(BenchReport {
            per_image,
            overall,
            threads: 1,
        })
    })
}

pub fn benchmark(manifest: &Manifest, repeat: usize, cfg: &ExtractConfig) -> Result<BenchReport> {
    let images = load_all(manifest)?;
    let named: Vec<(String, GrayImage)> = manifest
        .samples
        .iter()
        .map(|s| s.image_path.display().to_string())
        .zip(images)
        .collect();
    benchmark_images(&named, repeat, cfg)
}
