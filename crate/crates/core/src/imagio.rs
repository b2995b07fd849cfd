//! Image decoding, grayscale conversion and dataset manifests.
//!
//! Manifests are CSV files with the header `path,score,distortion,content_id`,
//! optionally preceded by a `# polarity=dmos|mos` comment line. Relative image
//! paths are resolved against the manifest's directory.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of the square processing block.
pub const BLOCK: usize = 8;

/// A dense row-major field of real samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "plane data length mismatch");
        Plane {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Plane::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Plane::new(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Sample with half-sample symmetric extension outside the field
    /// (`... b a | a b c ... y z | z y ...`).
    #[inline]
    pub fn get_mirrored(&self, row: isize, col: isize) -> f64 {
        self.get(mirror(row, self.height), mirror(col, self.width))
    }
}

/// Maps any integer index into `0..n` by half-sample symmetric reflection.
#[inline]
pub fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Luminance image with values nominally in `[0, 255]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage(Plane);

impl GrayImage {
    /// Validates dimensions (at least one full block) and finiteness.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width < BLOCK || height < BLOCK {
            return Err(Error::Dimension { width, height });
        }
        if data.len() != width * height {
            return Err(Error::Structural(format!(
                "expected {} samples for {width}x{height}, got {}",
                width * height,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(GrayImage(Plane::new(width, height, data)))
    }

    pub fn from_plane(plane: Plane) -> Result<Self> {
        let (w, h) = (plane.width, plane.height);
        GrayImage::new(w, h, plane.into_data())
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        GrayImage::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn plane(&self) -> &Plane {
        &self.0
    }

    /// Converts to 8-bit luma, rounding and clamping each sample.
    pub fn to_luma8(&self) -> image::GrayImage {
        let buf = self
            .0
            .data
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        image::GrayImage::from_raw(self.width() as u32, self.height() as u32, buf)
            .expect("buffer sized from dimensions")
    }

    /// Writes a lossless 8-bit grayscale file; format follows the extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_luma8().save(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Decode {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })
    }
}

impl AsRef<Plane> for GrayImage {
    fn as_ref(&self) -> &Plane {
        &self.0
    }
}

/// BT.601 luma.
#[inline]
pub fn luma601(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Converts a decoded image to real-valued luma. Gray inputs pass through.
pub fn gray_from_dynamic(img: &image::DynamicImage) -> Result<GrayImage> {
    use image::DynamicImage as D;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        D::ImageLuma8(g) => g.as_raw().iter().map(|&v| v as f64).collect(),
        D::ImageLumaA8(g) => g.pixels().map(|p| p.0[0] as f64).collect(),
        D::ImageLuma16(g) => g.as_raw().iter().map(|&v| v as f64 / 257.0).collect(),
        D::ImageLumaA16(g) => g.pixels().map(|p| p.0[0] as f64 / 257.0).collect(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| luma601(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64))
            .collect(),
    };
    GrayImage::new(w, h, data)
}

/// Decodes an image file and converts it to grayscale.
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    gray_from_dynamic(&img)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistortionLabel {
    Jpeg,
    Gblur,
    Wn,
    Multiple,
    Pristine,
}

impl DistortionLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            DistortionLabel::Jpeg => "jpeg",
            DistortionLabel::Gblur => "gblur",
            DistortionLabel::Wn => "wn",
            DistortionLabel::Multiple => "multiple",
            DistortionLabel::Pristine => "pristine",
        }
    }
}

impl FromStr for DistortionLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "jpeg" | "blocky" => DistortionLabel::Jpeg,
            "gblur" | "blur" => DistortionLabel::Gblur,
            "wn" | "awgn" | "noise" => DistortionLabel::Wn,
            "multiple" | "md" => DistortionLabel::Multiple,
            "pristine" | "ref" | "reference" => DistortionLabel::Pristine,
            other => return Err(format!("unknown distortion label {other:?}")),
        })
    }
}

impl fmt::Display for DistortionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Direction of the subjective score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// DMOS: higher means worse.
    #[default]
    HigherIsWorse,
    /// MOS: higher means better.
    HigherIsBetter,
}

impl Polarity {
    fn tag(self) -> &'static str {
        match self {
            Polarity::HigherIsWorse => "dmos",
            Polarity::HigherIsBetter => "mos",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image_path: PathBuf,
    pub subjective_score: f64,
    pub distortion: Option<DistortionLabel>,
    pub content_id: String,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Manifest {
    pub samples: Vec<Sample>,
    pub polarity: Polarity,
}

impl Manifest {
    /// Distinct content ids in order of first appearance.
    pub fn contents(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.samples
            .iter()
            .filter(|s| seen.insert(s.content_id.as_str()))
            .map(|s| s.content_id.as_str())
            .collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.subjective_score).collect()
    }

    /// Checks the invariants that a parse alone does not enforce.
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if !s.subjective_score.is_finite() {
                return Err(Error::Invariant(format!("sample {} has a non-finite score", i + 1)));
            }
            if s.content_id.is_empty() {
                return Err(Error::Invariant(format!("sample {} has an empty content_id", i + 1)));
            }
        }
        let n = self.contents().len();
        if n < 2 {
            return Err(Error::Invariant(format!(
                "manifest has {n} distinct content id(s); at least 2 are needed for a content split"
            )));
        }
        Ok(())
    }

    /// Serializes in the manifest CSV format. Paths are written as given.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "# polarity={}", self.polarity.tag()).unwrap();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(["path", "score", "distortion", "content_id"])
                .map_err(|e| Error::format(None, e.to_string()))?;
            for s in &self.samples {
                w.write_record([
                    s.image_path.to_string_lossy().as_ref(),
                    &s.subjective_score.to_string(),
                    s.distortion.map(|d| d.as_str()).unwrap_or(""),
                    &s.content_id,
                ])
                .map_err(|e| Error::format(None, e.to_string()))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

const MANIFEST_COLUMNS: [&str; 4] = ["path", "score", "distortion", "content_id"];

/// Parses a manifest file. Invariants are checked separately by [`Manifest::validate`].
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base)
}

/// Parses manifest text, resolving relative paths against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Manifest> {
    let mut polarity = Polarity::default();
    let mut body = text;
    if let Some(first) = text.lines().next() {
        let t = first.trim();
        if let Some(rest) = t.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix("polarity=") {
                polarity = match v.trim().to_ascii_lowercase().as_str() {
                    "dmos" => Polarity::HigherIsWorse,
                    "mos" => Polarity::HigherIsBetter,
                    other => {
                        return Err(Error::format(Some(0), format!("unknown polarity {other:?}")))
                    }
                };
            }
            body = &text[first.len()..];
            body = body.strip_prefix('\n').unwrap_or(body);
        }
    }

    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::format(Some(0), e.to_string()))?
        .clone();
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(MANIFEST_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(Some(0), format!("missing required column {name:?}")))?;
    }

    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::format(Some(row), e.to_string()))?;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let raw_path = field(0);
        if raw_path.is_empty() {
            return Err(Error::format(Some(row), "empty path"));
        }
        let score: f64 = field(1)
            .parse()
            .map_err(|_| Error::format(Some(row), format!("non-numeric score {:?}", field(1))))?;
        let distortion = match field(2) {
            "" => None,
            s => Some(s.parse().map_err(|m: String| Error::format(Some(row), m))?),
        };
        let p = Path::new(raw_path);
        let image_path = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        samples.push(Sample {
            image_path,
            subjective_score: score,
            distortion,
            content_id: field(3).to_string(),
        });
    }
    Ok(Manifest { samples, polarity })
}
