//! Synthetic distortions and labeled distortion ladders.

mod scene;

pub use scene::dead_leaves;

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagio::{mirror, DistortionLabel, GrayImage, Manifest, Plane, Polarity, Sample, BLOCK};

/// Annex K luminance quantization table, row-major by vertical frequency.
pub const JPEG_LUMA_TABLE: [[f64; 8]; 8] = [
    [16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0],
    [12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0],
    [14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0],
    [14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0],
    [18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0],
    [24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0],
    [49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0],
    [72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0],
];

/// Normalized 1-D Gaussian taps over `-ceil(3 sigma)..=ceil(3 sigma)`.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Separable Gaussian blur with mirrored borders; `sigma = 0` is the identity.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("blur sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let taps = gaussian_taps(sigma);
    let radius = (taps.len() / 2) as isize;
    let p = img.plane();
    let (w, h) = (p.width(), p.height());
    let horiz = Plane::from_fn(w, h, |r, c| {
        taps.iter()
            .enumerate()
            .map(|(i, t)| t * p.get(r, mirror(c as isize + i as isize - radius, w)))
            .sum()
    });
    let vert = Plane::from_fn(w, h, |r, c| {
        taps.iter()
            .enumerate()
            .map(|(i, t)| t * horiz.get(mirror(r as isize + i as isize - radius, h), c))
            .sum()
    });
    GrayImage::from_plane(vert)
}

/// Adds zero-mean Gaussian noise of standard deviation `sigma`, then clamps to `[0, 255]`.
pub fn awgn(img: &GrayImage, sigma: f64, seed: u64) -> Result<GrayImage> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = img
        .plane()
        .data()
        .iter()
        .map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 255.0))
        .collect();
    GrayImage::new(img.width(), img.height(), data)
}

fn dct_basis() -> [[f64; 8]; 8] {
    // basis[k][n] = c(k) cos((2n + 1) k pi / 16)
    std::array::from_fn(|k| {
        let c = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        std::array::from_fn(|n| c * (((2 * n + 1) * k) as f64 * std::f64::consts::PI / 16.0).cos())
    })
}

/// Orthonormal 2-D type-II DCT of one block.
pub fn dct8x8(block: &[[f64; 8]; 8]) -> [[f64; 8]; 8] {
    let b = dct_basis();
    let mut tmp = [[0.0; 8]; 8];
    for m in 0..8 {
        for v in 0..8 {
            tmp[m][v] = (0..8).map(|n| b[v][n] * block[m][n]).sum();
        }
    }
    std::array::from_fn(|u| std::array::from_fn(|v| (0..8).map(|m| b[u][m] * tmp[m][v]).sum()))
}

/// Inverse of [`dct8x8`].
pub fn idct8x8(coef: &[[f64; 8]; 8]) -> [[f64; 8]; 8] {
    let b = dct_basis();
    let mut tmp = [[0.0; 8]; 8];
    for u in 0..8 {
        for n in 0..8 {
            tmp[u][n] = (0..8).map(|v| b[v][n] * coef[u][v]).sum();
        }
    }
    std::array::from_fn(|m| std::array::from_fn(|n| (0..8).map(|u| b[u][m] * tmp[u][n]).sum()))
}

/// JPEG-like block quantization with the Annex K table scaled by `q`.
pub fn blocky(img: &GrayImage, q: f64) -> Result<GrayImage> {
    blocky_with_table(img, &JPEG_LUMA_TABLE, q)
}

/// Per whole 8x8 block: remove the block mean, quantize the AC terms of the
/// orthonormal DCT with step `table * q`, reconstruct and clamp. The block
/// mean (DC) is kept exactly. Samples outside whole blocks are untouched.
pub fn blocky_with_table(img: &GrayImage, table: &[[f64; 8]; 8], q: f64) -> Result<GrayImage> {
    if !(q >= 1.0) || !q.is_finite() {
        return Err(Error::InvalidArgument(format!("quantization scale must be >= 1, got {q}")));
    }
    let p = img.plane();
    let (w, h) = (p.width(), p.height());
    let mut out = p.data().to_vec();
    for br in 0..h / BLOCK {
        for bc in 0..w / BLOCK {
            let px = |m: usize, n: usize| p.get(br * BLOCK + m, bc * BLOCK + n);
            let mean = (0..BLOCK).flat_map(|m| (0..BLOCK).map(move |n| (m, n))).map(|(m, n)| px(m, n)).sum::<f64>() / 64.0;
            let block: [[f64; 8]; 8] = std::array::from_fn(|m| std::array::from_fn(|n| px(m, n) - mean));
            let mut coef = dct8x8(&block);
            for u in 0..8 {
                for v in 0..8 {
                    let step = table[u][v] * q;
                    coef[u][v] = if (u, v) == (0, 0) { 0.0 } else { (coef[u][v] / step).round() * step };
                }
            }
            let rec = idct8x8(&coef);
            for m in 0..BLOCK {
                for n in 0..BLOCK {
                    out[(br * BLOCK + m) * w + bc * BLOCK + n] = (rec[m][n] + mean).clamp(0.0, 255.0);
                }
            }
        }
    }
    GrayImage::new(w, h, out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistortionKind {
    Gblur,
    Awgn,
    Blocky,
}

impl DistortionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DistortionKind::Gblur => "gblur",
            DistortionKind::Awgn => "awgn",
            DistortionKind::Blocky => "blocky",
        }
    }

    pub fn label(self) -> DistortionLabel {
        match self {
            DistortionKind::Gblur => DistortionLabel::Gblur,
            DistortionKind::Awgn => DistortionLabel::Wn,
            DistortionKind::Blocky => DistortionLabel::Jpeg,
        }
    }
}

impl std::str::FromStr for DistortionKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gblur" | "blur" => Ok(DistortionKind::Gblur),
            "awgn" | "wn" | "noise" => Ok(DistortionKind::Awgn),
            "blocky" | "jpeg" => Ok(DistortionKind::Blocky),
            other => Err(format!("unknown distortion kind {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    /// Blur or noise sigma, or quantization scale for `blocky`.
    pub level: f64,
    /// Noise seed; ignored by the deterministic kinds.
    pub seed: u64,
}

impl DistortionSpec {
    pub fn new(kind: DistortionKind, level: f64) -> Self {
        DistortionSpec { kind, level, seed: 0 }
    }

    pub fn apply(&self, img: &GrayImage) -> Result<GrayImage> {
        match self.kind {
            DistortionKind::Gblur => gaussian_blur(img, self.level),
            DistortionKind::Awgn => awgn(img, self.level, self.seed),
            DistortionKind::Blocky => blocky(img, self.level),
        }
    }
}

/// Applies `chain` left to right.
pub fn apply_chain(img: &GrayImage, chain: &[DistortionSpec]) -> Result<GrayImage> {
    chain.iter().try_fold(img.clone(), |acc, d| d.apply(&acc))
}

/// Stream seed for one (content, level) cell, independent of evaluation order.
pub fn cell_seed(seed: u64, content: usize, level: usize) -> u64 {
    let mut z = seed ^ (content as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (level as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One rung of a ladder: a distortion chain and its pseudo score.
#[derive(Clone, Debug, PartialEq)]
pub struct LadderStep {
    pub chain: Vec<DistortionSpec>,
    pub score: f64,
    pub name: String,
}

impl LadderStep {
    pub fn single(spec: DistortionSpec) -> Self {
        LadderStep {
            name: format!("{}{}", spec.kind.as_str(), spec.level),
            score: spec.level,
            chain: vec![spec],
        }
    }

    fn label(&self) -> Option<DistortionLabel> {
        match self.chain.as_slice() {
            [] => Some(DistortionLabel::Pristine),
            [one] => Some(one.kind.label()),
            _ => Some(DistortionLabel::Multiple),
        }
    }
}

/// Blur followed by blockiness or noise, two levels of each stage.
/// A step's score is the sum over its stages of level / largest level.
pub fn combined_steps() -> Vec<LadderStep> {
    const BLUR: [f64; 2] = [1.0, 3.0];
    let second = [(DistortionKind::Blocky, [2.0, 6.0]), (DistortionKind::Awgn, [5.0, 15.0])];
    let mut steps = Vec::new();
    for blur in BLUR {
        for (kind, levels) in second {
            for level in levels {
                steps.push(LadderStep {
                    chain: vec![DistortionSpec::new(DistortionKind::Gblur, blur), DistortionSpec::new(kind, level)],
                    score: blur / BLUR[1] + level / levels[1],
                    name: format!("gblur{blur}_{}{level}", kind.as_str()),
                });
            }
        }
    }
    steps
}

/// Writes one PNG per (content, step) into `out_dir` plus `manifest.csv`.
/// Steps are emitted in ascending score order per content; scores are
/// higher-is-worse pseudo-DMOS.
pub fn build_ladder_steps(contents: &[GrayImage], steps: &[LadderStep], out_dir: &Path) -> Result<Manifest> {
    if contents.is_empty() || steps.is_empty() {
        return Err(Error::InvalidArgument("ladder needs at least one content and one step".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut order: Vec<usize> = (0..steps.len()).collect();
    order.sort_by(|&a, &b| steps[a].score.total_cmp(&steps[b].score));

    let cells: Vec<(usize, usize)> = (0..contents.len()).flat_map(|c| order.iter().map(move |&s| (c, s))).collect();
    let samples = cells
        .par_iter()
        .map(|&(ci, si)| {
            let step = &steps[si];
            let chain: Vec<DistortionSpec> = step
                .chain
                .iter()
                .enumerate()
                .map(|(k, d)| DistortionSpec {
                    seed: cell_seed(d.seed, ci, si * 16 + k),
                    ..*d
                })
                .collect();
            let img = apply_chain(&contents[ci], &chain)?;
            let file = format!("c{ci:03}_{si:02}_{}.png", sanitize(&step.name));
            img.save(&out_dir.join(&file))?;
            Ok(Sample {
                image_path: PathBuf::from(file),
                subjective_score: step.score,
                distortion: step.label(),
                content_id: format!("c{ci:03}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        samples,
        polarity: Polarity::HigherIsWorse,
    };
    manifest.write(&out_dir.join("manifest.csv"))?;
    Ok(Manifest {
        samples: manifest
            .samples
            .into_iter()
            .map(|s| Sample {
                image_path: out_dir.join(s.image_path),
                ..s
            })
            .collect(),
        ..manifest
    })
}

/// Single-distortion ladder; the score of each image is its distortion level.
pub fn build_ladder(contents: &[GrayImage], specs: &[DistortionSpec], out_dir: &Path) -> Result<Manifest> {
    let steps: Vec<LadderStep> = specs.iter().copied().map(LadderStep::single).collect();
    build_ladder_steps(contents, &steps, out_dir)
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn impulse(n: usize) -> GrayImage {
        let mut d = vec![0.0; n * n];
        d[(n / 2) * n + n / 2] = 255.0;
        GrayImage::new(n, n, d).unwrap()
    }

    #[test]
    fn blur_identity_and_constant() {
        let img = dead_leaves(32, 32, 3);
        assert_eq!(gaussian_blur(&img, 0.0).unwrap(), img);
        let flat = GrayImage::filled(20, 20, 77.0).unwrap();
        for s in [0.5, 1.0, 3.0, 9.0] {
            for v in gaussian_blur(&flat, s).unwrap().plane().data() {
                assert!((v - 77.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blur_impulse_matches_direct_convolution() {
        let n = 17;
        let img = impulse(n);
        let out = gaussian_blur(&img, 1.0).unwrap();
        // Direct 2-D convolution with the outer-product kernel.
        let t = gaussian_taps(1.0);
        let r = (t.len() / 2) as isize;
        let c = (n / 2) as isize;
        for y in 0..n as isize {
            for x in 0..n as isize {
                let (dy, dx) = (y - c, x - c);
                let want = if dy.abs() <= r && dx.abs() <= r { 255.0 * t[(dy + r) as usize] * t[(dx + r) as usize] } else { 0.0 };
                assert!((out.plane().get(y as usize, x as usize) - want).abs() < 1e-12);
            }
        }
        assert!((out.plane().get(n / 2, n / 2) - 255.0 * t[r as usize] * t[r as usize]).abs() < 1e-12);
    }

    #[test]
    fn noise_identity_determinism_and_variance() {
        let img = GrayImage::filled(256, 256, 128.0).unwrap();
        assert_eq!(awgn(&img, 0.0, 1).unwrap(), img);
        let a = awgn(&img, 10.0, 42).unwrap();
        assert_eq!(a, awgn(&img, 10.0, 42).unwrap());
        assert_ne!(a, awgn(&img, 10.0, 43).unwrap());
        let d: Vec<f64> = a.plane().data().iter().map(|v| v - 128.0).collect();
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
        assert!((var / 100.0 - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn dct_roundtrip() {
        let b: [[f64; 8]; 8] = std::array::from_fn(|m| std::array::from_fn(|n| (m * 8 + n) as f64 * 1.7 - 20.0));
        let r = idct8x8(&dct8x8(&b));
        for m in 0..8 {
            for n in 0..8 {
                assert!((r[m][n] - b[m][n]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn blocky_constant_is_unchanged() {
        let flat = GrayImage::filled(24, 20, 93.0).unwrap();
        for q in [1.0, 4.0, 50.0] {
            assert_eq!(blocky(&flat, q).unwrap(), flat);
        }
    }

    #[test]
    fn blocky_fixed_point_with_unit_table() {
        let coef: [[f64; 8]; 8] = std::array::from_fn(|u| std::array::from_fn(|v| ((u * 3 + v * 5) % 7) as f64 - 3.0));
        let mut c = coef;
        c[0][0] = 8.0 * 120.0;
        let block = idct8x8(&c);
        let data: Vec<f64> = block.iter().flatten().copied().collect();
        let img = GrayImage::new(8, 8, data.clone()).unwrap();
        let out = blocky_with_table(&img, &[[1.0; 8]; 8], 1.0).unwrap();
        for (a, b) in out.plane().data().iter().zip(&data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_levels() {
        let img = GrayImage::filled(8, 8, 0.0).unwrap();
        assert!(blocky(&img, 0.5).is_err());
        assert!(gaussian_blur(&img, -1.0).is_err());
        assert!(awgn(&img, f64::NAN, 0).is_err());
    }

    #[test]
    fn ladder_layout() {
        let dir = tempfile::tempdir().unwrap();
        let contents: Vec<GrayImage> = (0..3).map(|s| dead_leaves(16, 16, s)).collect();
        let specs = [2.0, 0.5, 1.0].map(|l| DistortionSpec::new(DistortionKind::Gblur, l));
        let m = build_ladder(&contents, &specs, dir.path()).unwrap();
        assert_eq!(m.samples.len(), 9);
        assert_eq!(m.polarity, Polarity::HigherIsWorse);
        let scores: Vec<f64> = m.samples[..3].iter().map(|s| s.subjective_score).collect();
        assert_eq!(scores, vec![0.5, 1.0, 2.0]);
        assert_eq!(m.contents(), vec!["c000", "c001", "c002"]);
        let back = crate::imagio::read_manifest(dir.path().join("manifest.csv")).unwrap();
        assert_eq!(back.samples, m.samples);
    }

    #[test]
    fn ladder_rejects_unwritable_dir() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("f");
        fs::write(&file, b"x").unwrap();
        let r = build_ladder(&[dead_leaves(8, 8, 0)], &[DistortionSpec::new(DistortionKind::Gblur, 1.0)], &file.join("sub"));
        assert!(matches!(r, Err(Error::Io { .. })));
    }
}
