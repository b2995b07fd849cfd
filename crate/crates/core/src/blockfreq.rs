//! Blockwise 8x8 DFT, DC-centering shift and Manhattan frequency bands.
//!
//! The forward transform is unnormalized,
//! `F(u,v) = sum_m sum_n I(m,n) exp(-j 2 pi (u m / 8 + v n / 8))`,
//! with `u` indexing rows. After the shift the DC term sits at cell (4, 4) and
//! every cell gets the index `|u - 4| + |v - 4|` in `0..=8`.

use num_complex::Complex64;

use crate::imagio::{Plane, BLOCK};

const N: usize = BLOCK;
/// Grid position of the DC coefficient after [`center_shift`].
pub const DC_CELL: (usize, usize) = (N / 2, N / 2);

pub type Block<T> = [[T; N]; N];

const S: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// `c * exp(-j 2 pi k / 8)` for `k` in `0..4`, exact for k = 0 and 2.
#[inline]
fn twiddle(c: Complex64, k: usize) -> Complex64 {
    match k {
        0 => c,
        1 => Complex64::new(S * (c.re + c.im), S * (c.im - c.re)),
        2 => Complex64::new(c.im, -c.re),
        3 => Complex64::new(S * (c.im - c.re), -S * (c.re + c.im)),
        _ => unreachable!(),
    }
}

#[inline]
fn fft4(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> [Complex64; 4] {
    let (e0, e1) = (a + c, a - c);
    let (o0, o1) = (b + d, b - d);
    let o1 = twiddle(o1, 2);
    [e0 + o0, e1 + o1, e0 - o0, e1 - o1]
}

/// Radix-2 8-point DFT. Constant inputs give exactly zero AC terms.
#[inline]
fn fft8(x: &[Complex64; N]) -> [Complex64; N] {
    let e = fft4(x[0], x[2], x[4], x[6]);
    let o = fft4(x[1], x[3], x[5], x[7]);
    let mut out = [Complex64::default(); N];
    for k in 0..4 {
        let t = twiddle(o[k], k);
        out[k] = e[k] + t;
        out[k + 4] = e[k] - t;
    }
    out
}

/// Unnormalized forward 2-D DFT of an 8x8 block, indexed `[u][v]`.
pub fn dft8x8(block: &Block<f64>) -> Block<Complex64> {
    let mut rows = [[Complex64::default(); N]; N];
    for (m, row) in block.iter().enumerate() {
        let x = row.map(|v| Complex64::new(v, 0.0));
        rows[m] = fft8(&x);
    }
    let mut out = [[Complex64::default(); N]; N];
    for v in 0..N {
        let col: [Complex64; N] = std::array::from_fn(|m| rows[m][v]);
        let f = fft8(&col);
        for u in 0..N {
            out[u][v] = f[u];
        }
    }
    out
}

/// Circular shift by 4 in both directions so that DC moves to (4, 4).
pub fn center_shift<T: Copy>(f: &Block<T>) -> Block<T> {
    let h = N / 2;
    std::array::from_fn(|u| std::array::from_fn(|v| f[(u + h) % N][(v + h) % N]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Band {
    Dc,
    Low,
    Mid,
    High,
}

impl Band {
    pub fn from_index(i: u8) -> Band {
        match i {
            0 => Band::Dc,
            1..=3 => Band::Low,
            4 => Band::Mid,
            _ => Band::High,
        }
    }
}

/// Manhattan frequency index and band label of each shifted cell.
#[derive(Clone, Debug, PartialEq)]
pub struct BandIndexMap {
    index: Block<u8>,
}

impl BandIndexMap {
    pub fn index(&self, u: usize, v: usize) -> u8 {
        self.index[u][v]
    }

    pub fn band(&self, u: usize, v: usize) -> Band {
        Band::from_index(self.index[u][v])
    }

    /// Cells carrying `band`, in raster order.
    pub fn cells(&self, band: Band) -> Vec<(usize, usize)> {
        (0..N)
            .flat_map(|u| (0..N).map(move |v| (u, v)))
            .filter(|&(u, v)| self.band(u, v) == band)
            .collect()
    }

    /// Sums `grid` over the low and high bands.
    #[inline]
    pub fn band_sums(&self, grid: &Block<f64>) -> (f64, f64) {
        let (mut lo, mut hi) = (0.0, 0.0);
        for u in 0..N {
            for v in 0..N {
                match self.index[u][v] {
                    1..=3 => lo += grid[u][v],
                    5..=8 => hi += grid[u][v],
                    _ => {}
                }
            }
        }
        (lo, hi)
    }
}

pub fn manhattan_index() -> BandIndexMap {
    let (u0, v0) = DC_CELL;
    BandIndexMap {
        index: std::array::from_fn(|u| std::array::from_fn(|v| (u.abs_diff(u0) + v.abs_diff(v0)) as u8)),
    }
}

/// Center-shifted DFT magnitudes of one tile.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpectrum {
    pub block_row: usize,
    pub block_col: usize,
    pub magnitudes: Block<f64>,
}

impl BlockSpectrum {
    /// Magnitude grid as 8 lines of space-separated values.
    pub fn to_ascii_grid(&self) -> String {
        self.magnitudes
            .iter()
            .map(|row| row.iter().map(|m| format!("{m:.6}")).collect::<Vec<_>>().join(" ") + "\n")
            .collect()
    }
}

/// Copies the tile whose top-left sample is at `(8 * br, 8 * bc)`.
pub fn tile(field: &Plane, br: usize, bc: usize) -> Block<f64> {
    std::array::from_fn(|m| std::array::from_fn(|n| field.get(br * N + m, bc * N + n)))
}

/// Magnitudes of the shifted spectrum of one tile.
pub fn tile_spectrum(field: &Plane, br: usize, bc: usize) -> BlockSpectrum {
    let f = center_shift(&dft8x8(&tile(field, br, bc)));
    BlockSpectrum {
        block_row: br,
        block_col: bc,
        magnitudes: f.map(|row| row.map(|c| c.norm())),
    }
}

/// Number of whole tiles `(rows, cols)`; the remainder is cropped.
pub fn block_grid(field: &Plane) -> (usize, usize) {
    (field.height() / N, field.width() / N)
}

/// Spectra of all non-overlapping tiles, raster order from the top-left.
pub fn block_spectra(field: &Plane) -> Vec<BlockSpectrum> {
    let (rows, cols) = block_grid(field);
    (0..rows)
        .flat_map(|br| (0..cols).map(move |bc| (br, bc)))
        .map(|(br, bc)| tile_spectrum(field, br, bc))
        .collect()
}
