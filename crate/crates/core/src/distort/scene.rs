//! Dead-leaves test scenes.
//!
//! Occluding disks with power-law radii reproduce the scale invariance and
//! sharp occlusion edges of natural images well enough for the blur, noise
//! and blockiness responses exercised by the tests and the `synth` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imagio::{GrayImage, Plane};

/// A `width x height` dead-leaves scene in `[0, 255]`, deterministic per seed.
pub fn dead_leaves(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let r_min = 8.0f64;
    let r_max = (w.min(h) / 3.0).max(2.0);
    let mut canvas = vec![f64::NAN; width * height];
    let mut uncovered = width * height;
    let background = rng.random_range(40.0..200.0);
    // Painted front to back: a leaf only fills pixels not yet covered.
    // Each leaf's tone is a bounded step from the previous one.
    let mut tone: f64 = rng.random_range(60.0..190.0);
    let mut leaves = 0;
    let cap = (width * height).max(20_000);
    while uncovered > 0 && leaves < cap {
        leaves += 1;
        // Inverse-CDF sample of p(r) ~ r^-3 on [r_min, r_max].
        let u: f64 = rng.random();
        let inv = 1.0 / (r_min * r_min) - u * (1.0 / (r_min * r_min) - 1.0 / (r_max * r_max));
        let r = inv.powf(-0.5);
        let cx = rng.random_range(-r..w + r);
        let cy = rng.random_range(-r..h + r);
        tone = (tone + rng.random_range(-40.0..40.0)).clamp(15.0, 240.0);
        let base = tone;
        let grad = rng.random_range(-0.3..0.3);
        let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let tex_amp = rng.random_range(0.0..4.0);
        let tex_freq = rng.random_range(0.2..1.2);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let (ct, st) = (theta.cos(), theta.sin());

        let y0 = (cy - r).floor().max(0.0) as usize;
        let y1 = ((cy + r).ceil().max(0.0) as usize).min(height);
        let x0 = (cx - r).floor().max(0.0) as usize;
        let x1 = ((cx + r).ceil().max(0.0) as usize).min(width);
        for y in y0..y1 {
            for x in x0..x1 {
                let i = y * width + x;
                if !canvas[i].is_nan() {
                    continue;
                }
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let along = dx * ct + dy * st;
                let v = base + grad * along + tex_amp * (tex_freq * along + phase).sin();
                canvas[i] = v.clamp(0.0, 255.0);
                uncovered -= 1;
            }
        }
    }
    for v in canvas.iter_mut().filter(|v| v.is_nan()) {
        *v = background;
    }
    GrayImage::from_plane(Plane::new(width, height, canvas)).expect("scene dimensions are valid")
}
