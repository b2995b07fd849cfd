//! Blind image quality assessment from blockwise DFT statistics.
//!
//! An image is tiled into 8x8 blocks; each block of the grayscale image and
//! of its MSCN-normalized field is transformed with a DFT, and the magnitudes
//! of its low- and high-frequency coefficients are summed. Histograms and
//! extremal means of these per-block sums form a 24-dimensional feature
//! vector, which an exponential-kernel Gaussian process maps to a quality
//! score.
//!
//! ```no_run
//! use freqiqa::{features, imagio};
//!
//! let img = imagio::load_gray("photo.png")?;
//! let f = features::extract(&img, &features::ExtractConfig::default())?;
//! println!("{:?}", f.as_slice());
//! # Ok::<(), freqiqa::Error>(())
//! ```

pub mod blockfreq;
pub mod distort;
pub mod error;
pub mod features;
pub mod gpr;
pub mod harness;
pub mod imagio;
pub mod metrics;
pub mod mscn;

pub use error::{Error, Result};
pub use features::{extract, ExtractConfig, FeatureVector};
pub use imagio::{load_gray, GrayImage};
