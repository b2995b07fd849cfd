//! Mean subtracted contrast normalized (MSCN) coefficients.
//!
//! Local statistics use a 7x7 Gaussian window with standard deviation 7/6,
//! normalized to unit sum, and half-sample symmetric extension at the borders.

use crate::imagio::{GrayImage, Plane};

/// Window half extent in both directions.
pub const HALF: usize = 3;
const SIDE: usize = 2 * HALF + 1;
/// Standard deviation of the weighting window, in samples.
pub const WINDOW_SIGMA: f64 = 7.0 / 6.0;

/// Normalized, circularly symmetric 7x7 Gaussian weights.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianWindow {
    weights: [[f64; SIDE]; SIDE],
}

impl GaussianWindow {
    /// Weight at offset `(k, l)`, each in `-3..=3`.
    #[inline]
    pub fn weight(&self, k: isize, l: isize) -> f64 {
        self.weights[(k + HALF as isize) as usize][(l + HALF as isize) as usize]
    }

    pub fn half_width(&self) -> usize {
        HALF
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().flatten().sum()
    }
}

pub fn gaussian_window() -> GaussianWindow {
    let mut weights = [[0.0; SIDE]; SIDE];
    let two_var = 2.0 * WINDOW_SIGMA * WINDOW_SIGMA;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, w) in row.iter_mut().enumerate() {
            let k = i as f64 - HALF as f64;
            let l = j as f64 - HALF as f64;
            *w = (-(k * k + l * l) / two_var).exp();
        }
    }
    let total: f64 = weights.iter().flatten().sum();
    for w in weights.iter_mut().flatten() {
        *w /= total;
    }
    GaussianWindow { weights }
}

/// MSCN coefficient field, same size as its source image.
#[derive(Clone, Debug, PartialEq)]
pub struct MscnField(Plane);

impl MscnField {
    pub fn plane(&self) -> &Plane {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    /// One ASCII row per image row, space-separated, full precision.
    pub fn to_ascii_grid(&self) -> String {
        let mut s = String::new();
        for r in 0..self.height() {
            let row: Vec<String> = (0..self.width()).map(|c| format!("{:e}", self.0.get(r, c))).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }
}

impl AsRef<Plane> for MscnField {
    fn as_ref(&self) -> &Plane {
        &self.0
    }
}

/// Visits the 7x7 neighbourhood of `(r, c)` with mirrored borders.
#[inline]
fn for_window(p: &Plane, w: &GaussianWindow, r: usize, c: usize, mut f: impl FnMut(f64, f64)) {
    let h = HALF as isize;
    let interior = r >= HALF && c >= HALF && r + HALF < p.height() && c + HALF < p.width();
    if interior {
        let width = p.width();
        let data = p.data();
        for (i, wrow) in w.weights.iter().enumerate() {
            let base = (r + i - HALF) * width + c - HALF;
            for (j, &wt) in wrow.iter().enumerate() {
                f(wt, data[base + j]);
            }
        }
    } else {
        for k in -h..=h {
            for l in -h..=h {
                f(w.weight(k, l), p.get_mirrored(r as isize + k, c as isize + l));
            }
        }
    }
}

/// Gaussian-weighted local mean.
///
/// Accumulated as offsets from the center sample so a flat neighbourhood
/// yields its value exactly.
pub fn local_mean(img: &GrayImage, w: &GaussianWindow) -> Plane {
    let p = img.plane();
    Plane::from_fn(p.width(), p.height(), |r, c| {
        let center = p.get(r, c);
        let mut acc = 0.0;
        for_window(p, w, r, c, |wt, v| acc += wt * (v - center));
        center + acc
    })
}

/// Gaussian-weighted local standard deviation around `mean`.
pub fn local_sigma(img: &GrayImage, w: &GaussianWindow, mean: &Plane) -> Plane {
    let p = img.plane();
    Plane::from_fn(p.width(), p.height(), |r, c| {
        let mu = mean.get(r, c);
        let mut acc = 0.0;
        for_window(p, w, r, c, |wt, v| {
            let d = v - mu;
            acc += wt * d * d;
        });
        acc.max(0.0).sqrt()
    })
}

/// `(I - mu) / (sigma + 1)` per pixel.
pub fn mscn(img: &GrayImage) -> MscnField {
    let w = gaussian_window();
    let mean = local_mean(img, &w);
    let sigma = local_sigma(img, &w, &mean);
    let p = img.plane();
    let data = p
        .data()
        .iter()
        .zip(mean.data())
        .zip(sigma.data())
        .map(|((&i, &mu), &s)| (i - mu) / (s + 1.0))
        .collect();
    MscnField(Plane::new(p.width(), p.height(), data))
}
