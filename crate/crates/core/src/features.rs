//! Sum-parameter sets and the 24-dimensional feature vector.
//!
//! Layout (frozen; model files depend on it):
//!
//! | features  | source                                    |
//! |-----------|-------------------------------------------|
//! | f1..f5    | gray LF sums: zero, (0,.25], .. (.75, 1]  |
//! | f6..f10   | MSCN LF sums, same bins                   |
//! | f11..f15  | gray HF sums, same bins                   |
//! | f16..f20  | MSCN HF sums, same bins                   |
//! | f21, f22  | mean of the 100 largest gray / MSCN HF    |
//! | f23, f24  | mean of the 100 smallest gray / MSCN HF   |
//!
//! Histogram entries are fractions of the image's blocks.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blockfreq::{block_spectra, manhattan_index, BandIndexMap, BlockSpectrum};
use crate::error::{Error, Result};
use crate::imagio::GrayImage;
use crate::mscn::mscn;

pub const NUM_FEATURES: usize = 24;
pub const NUM_HISTOGRAM: usize = 20;
/// Identifies the feature order above in model and feature files.
pub const FEATURE_LAYOUT: &str = "fdgpr24-v1";
/// How many extreme HF sums are averaged for f21..f24.
pub const EXTREMAL_COUNT: usize = 100;
pub const DEFAULT_ZERO_EPSILON: f64 = 1e-6;

/// Per-block band sums. Each list is in block raster order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SumParameterSets {
    pub g_lf: Vec<f64>,
    pub g_hf: Vec<f64>,
    pub m_lf: Vec<f64>,
    pub m_hf: Vec<f64>,
}

impl SumParameterSets {
    pub fn block_count(&self) -> usize {
        self.g_lf.len()
    }

    /// Sets in feature-group order: gray LF, MSCN LF, gray HF, MSCN HF.
    pub fn groups(&self) -> [&[f64]; 4] {
        [&self.g_lf, &self.m_lf, &self.g_hf, &self.m_hf]
    }

    fn check(&self) -> Result<usize> {
        let b = self.g_lf.len();
        if [self.g_hf.len(), self.m_lf.len(), self.m_hf.len()].iter().any(|&n| n != b) {
            return Err(Error::Structural("sum-parameter sets differ in length".into()));
        }
        if b == 0 {
            return Err(Error::Structural("no blocks".into()));
        }
        Ok(b)
    }
}

/// Divisors mapping each sum-parameter set onto a nominal `[0, 1]` scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationFactors {
    pub g_lf: f64,
    pub m_lf: f64,
    pub g_hf: f64,
    pub m_hf: f64,
}

impl Default for NormalizationFactors {
    fn default() -> Self {
        NormalizationFactors {
            g_lf: 1000.0,
            m_lf: 100.0,
            g_hf: 100.0,
            m_hf: 20.0,
        }
    }
}

impl NormalizationFactors {
    pub fn new(g_lf: f64, m_lf: f64, g_hf: f64, m_hf: f64) -> Result<Self> {
        let nf = NormalizationFactors { g_lf, m_lf, g_hf, m_hf };
        if [g_lf, m_lf, g_hf, m_hf].iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument(format!("normalization factors must be positive: {nf:?}")));
        }
        Ok(nf)
    }
}

/// Per block: sum of shifted-DFT magnitudes over LF (index 1..=3) and HF (5..=8).
pub fn sum_parameters(
    gray: &[BlockSpectrum],
    mscn: &[BlockSpectrum],
    bands: &BandIndexMap,
) -> Result<SumParameterSets> {
    if gray.len() != mscn.len() {
        return Err(Error::Structural(format!(
            "gray has {} blocks, MSCN has {}",
            gray.len(),
            mscn.len()
        )));
    }
    if gray.is_empty() {
        return Err(Error::Structural("no blocks".into()));
    }
    let mut sets = SumParameterSets::default();
    for (g, m) in gray.iter().zip(mscn) {
        let (lo, hi) = bands.band_sums(&g.magnitudes);
        sets.g_lf.push(lo);
        sets.g_hf.push(hi);
        let (lo, hi) = bands.band_sums(&m.magnitudes);
        sets.m_lf.push(lo);
        sets.m_hf.push(hi);
    }
    Ok(sets)
}

pub fn normalize(sets: &SumParameterSets, nf: &NormalizationFactors) -> SumParameterSets {
    let div = |v: &[f64], d: f64| v.iter().map(|x| x / d).collect();
    SumParameterSets {
        g_lf: div(&sets.g_lf, nf.g_lf),
        g_hf: div(&sets.g_hf, nf.g_hf),
        m_lf: div(&sets.m_lf, nf.m_lf),
        m_hf: div(&sets.m_hf, nf.m_hf),
    }
}

/// Bin of a normalized sum: 0 for `<= epsilon`, then quarter ranges; values
/// above 1 land in the last bin.
#[inline]
pub fn bin_of(v: f64, epsilon: f64) -> usize {
    if v <= epsilon {
        0
    } else if v <= 0.25 {
        1
    } else if v <= 0.5 {
        2
    } else if v <= 0.75 {
        3
    } else {
        4
    }
}

/// Features f1..f20.
pub fn histogram_features(normalized: &SumParameterSets, epsilon: f64) -> Result<[f64; NUM_HISTOGRAM]> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("zero epsilon must be >= 0, got {epsilon}")));
    }
    let b = normalized.check()?;
    let mut out = [0.0; NUM_HISTOGRAM];
    for (g, set) in normalized.groups().iter().enumerate() {
        let mut counts = [0usize; 5];
        for &v in set.iter() {
            counts[bin_of(v, epsilon)] += 1;
        }
        for (k, &c) in counts.iter().enumerate() {
            out[5 * g + k] = c as f64 / b as f64;
        }
    }
    Ok(out)
}

fn extremes(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = EXTREMAL_COUNT.min(v.len());
    let low = v[..k].iter().sum::<f64>() / k as f64;
    let high = v[v.len() - k..].iter().rev().sum::<f64>() / k as f64;
    (high, low)
}

/// Features f21..f24: means of the `min(100, B)` largest and smallest
/// normalized HF sums, gray then MSCN.
pub fn extremal_means(normalized: &SumParameterSets) -> Result<[f64; 4]> {
    normalized.check()?;
    let (g_hi, g_lo) = extremes(&normalized.g_hf);
    let (m_hi, m_lo) = extremes(&normalized.m_hf);
    Ok([g_hi, m_hi, g_lo, m_lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub nf: NormalizationFactors,
    pub zero_epsilon: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            nf: NormalizationFactors::default(),
            zero_epsilon: DEFAULT_ZERO_EPSILON,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureVector(pub [f64; NUM_FEATURES]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// 1-based access matching the `f1..f24` naming.
    pub fn f(&self, k: usize) -> f64 {
        self.0[k - 1]
    }
}

/// Raw (unnormalized) sum-parameter sets of an image.
pub fn image_sum_parameters(img: &GrayImage) -> Result<SumParameterSets> {
    let field = mscn(img);
    let gray = block_spectra(img.plane());
    let norm = block_spectra(field.plane());
    sum_parameters(&gray, &norm, &manhattan_index())
}

/// Full extraction pipeline for one image.
pub fn extract(img: &GrayImage, cfg: &ExtractConfig) -> Result<FeatureVector> {
    let raw = image_sum_parameters(img)?;
    features_from_sets(&raw, cfg)
}

pub fn features_from_sets(raw: &SumParameterSets, cfg: &ExtractConfig) -> Result<FeatureVector> {
    let normalized = normalize(raw, &cfg.nf);
    let hist = histogram_features(&normalized, cfg.zero_epsilon)?;
    let ext = extremal_means(&normalized)?;
    let mut f = [0.0; NUM_FEATURES];
    f[..NUM_HISTOGRAM].copy_from_slice(&hist);
    f[NUM_HISTOGRAM..].copy_from_slice(&ext);
    Ok(FeatureVector(f))
}

/// One row of a feature file.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub path: String,
    pub features: FeatureVector,
    pub score: Option<f64>,
}

/// First line of every feature file.
pub fn feature_file_tag() -> String {
    format!("# freqiqa-features v1 layout={FEATURE_LAYOUT}")
}

pub fn format_feature_csv(rows: &[FeatureRow]) -> String {
    let mut s = feature_file_tag();
    s.push('\n');
    s.push_str("path");
    for k in 1..=NUM_FEATURES {
        write!(s, ",f{k}").unwrap();
    }
    s.push_str(",score\n");
    for row in rows {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        let mut rec: Vec<String> = vec![row.path.clone()];
        rec.extend(row.features.0.iter().map(|v| format!("{v:?}")));
        rec.push(row.score.map(|v| format!("{v:?}")).unwrap_or_default());
        w.write_record(&rec).expect("in-memory write");
        s.push_str(std::str::from_utf8(&w.into_inner().expect("in-memory flush")).expect("utf8"));
    }
    s
}

pub fn parse_feature_csv(text: &str) -> Result<Vec<FeatureRow>> {
    let first = text.lines().next().unwrap_or("");
    let tag = feature_file_tag();
    if first.trim() != tag {
        return Err(Error::Version {
            expected: tag,
            found: first.trim().to_string(),
        });
    }
    let body = &text[first.len()..];
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.trim_start_matches('\n').as_bytes());
    let headers = rdr.headers().map_err(|e| Error::format(Some(0), e.to_string()))?.clone();
    if headers.len() < 1 + NUM_FEATURES || headers.get(0) != Some("path") {
        return Err(Error::format(Some(0), "expected header path,f1..f24[,score]"));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::format(Some(row), e.to_string()))?;
        let num = |k: usize| -> Result<f64> {
            let s = rec.get(k).unwrap_or("");
            s.parse().map_err(|_| Error::format(Some(row), format!("column {k}: non-numeric {s:?}")))
        };
        let mut f = [0.0; NUM_FEATURES];
        for (k, slot) in f.iter_mut().enumerate() {
            *slot = num(k + 1)?;
        }
        let score = match rec.get(1 + NUM_FEATURES) {
            None | Some("") => None,
            Some(_) => Some(num(1 + NUM_FEATURES)?),
        };
        rows.push(FeatureRow {
            path: rec.get(0).unwrap_or("").to_string(),
            features: FeatureVector(f),
            score,
        });
    }
    Ok(rows)
}

pub fn read_feature_csv(path: impl AsRef<Path>) -> Result<Vec<FeatureRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockfreq::Block;

    fn spectrum(fill: f64) -> BlockSpectrum {
        BlockSpectrum {
            block_row: 0,
            block_col: 0,
            magnitudes: [[fill; 8]; 8] as Block<f64>,
        }
    }

    #[test]
    fn unit_magnitudes_sum_to_band_sizes() {
        let s = sum_parameters(&[spectrum(1.0)], &[spectrum(1.0)], &manhattan_index()).unwrap();
        assert_eq!(s.g_lf, vec![24.0]);
        assert_eq!(s.g_hf, vec![25.0]);
        assert_eq!(s.m_lf, vec![24.0]);
        assert_eq!(s.m_hf, vec![25.0]);
    }

    #[test]
    fn mismatched_block_counts() {
        let r = sum_parameters(&[spectrum(1.0)], &[], &manhattan_index());
        assert!(matches!(r, Err(Error::Structural(_))));
    }

    #[test]
    fn normalize_divides() {
        let sets = SumParameterSets {
            g_lf: vec![500.0, 0.0, 1200.0],
            g_hf: vec![1.0; 3],
            m_lf: vec![1.0; 3],
            m_hf: vec![1.0; 3],
        };
        let n = normalize(&sets, &NormalizationFactors::default());
        assert_eq!(n.g_lf, vec![0.5, 0.0, 1.2]);
        assert_eq!(n.m_hf, vec![0.05; 3]);
    }

    #[test]
    fn bins() {
        let eps = 1e-6;
        assert_eq!(bin_of(0.0, eps), 0);
        assert_eq!(bin_of(1e-6, eps), 0);
        assert_eq!(bin_of(0.25, eps), 1);
        assert_eq!(bin_of(0.3, eps), 2);
        assert_eq!(bin_of(0.75, eps), 3);
        assert_eq!(bin_of(0.76, eps), 4);
        assert_eq!(bin_of(7.0, eps), 4);
    }

    #[test]
    fn histogram_all_point_three() {
        let sets = SumParameterSets {
            g_lf: vec![0.3; 10],
            g_hf: vec![0.3; 10],
            m_lf: vec![0.3; 10],
            m_hf: vec![0.3; 10],
        };
        let h = histogram_features(&sets, 1e-6).unwrap();
        for g in 0..4 {
            assert_eq!(&h[5 * g..5 * g + 5], &[0.0, 0.0, 1.0, 0.0, 0.0]);
        }
        assert!(histogram_features(&SumParameterSets::default(), 1e-6).is_err());
    }

    #[test]
    fn extremal_small_and_split_sets() {
        let mut hf: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let sets = SumParameterSets {
            g_lf: vec![0.0; 50],
            g_hf: hf.clone(),
            m_lf: vec![0.0; 50],
            m_hf: vec![0.0; 50],
        };
        let e = extremal_means(&sets).unwrap();
        assert!((e[0] - 0.5).abs() < 1e-12);
        assert!((e[2] - 0.5).abs() < 1e-12);

        hf = [vec![0.8; 100], vec![0.2; 100]].concat();
        let sets = SumParameterSets {
            g_lf: vec![0.0; 200],
            g_hf: hf,
            m_lf: vec![0.0; 200],
            m_hf: vec![0.0; 200],
        };
        let e = extremal_means(&sets).unwrap();
        assert!((e[0] - 0.8).abs() < 1e-12);
        assert!((e[2] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn constant_image_vector() {
        let img = GrayImage::filled(64, 64, 91.0).unwrap();
        let f = extract(&img, &ExtractConfig::default()).unwrap();
        let mut want = [0.0; 24];
        for g in 0..4 {
            want[5 * g] = 1.0;
        }
        assert_eq!(f.0, want);
    }

    #[test]
    fn feature_csv_roundtrip_and_tag() {
        let rows = vec![
            FeatureRow {
                path: "a,b.png".into(),
                features: FeatureVector(std::array::from_fn(|i| i as f64 * 0.1 + 1e-17)),
                score: Some(3.25),
            },
            FeatureRow {
                path: "c.png".into(),
                features: FeatureVector([0.0; 24]),
                score: None,
            },
        ];
        let text = format_feature_csv(&rows);
        assert_eq!(parse_feature_csv(&text).unwrap(), rows);
        let bad = text.replacen("fdgpr24-v1", "fdgpr24-v0", 1);
        assert!(matches!(parse_feature_csv(&bad), Err(Error::Version { .. })));
    }
}
