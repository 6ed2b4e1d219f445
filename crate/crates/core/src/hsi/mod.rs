//! Hyperspectral cubes, per-band normalization, and 3D patch extraction.

mod io;
mod patches;

pub use io::{
    convert_raw, load_cube, load_labels, write_cube, write_labels, ByteOrder, Interleave, LabelRaster, RawLayout,
    SampleType,
};
pub use patches::{extract_all_patches, extract_patches, PatchBatch};

use crate::{Error, Result};

/// A `width × height × bands` reflectance grid stored band-sequentially.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    width: usize,
    height: usize,
    bands: usize,
    values: Vec<f64>,
    labels: Option<Vec<u32>>,
    wavelengths: Option<Vec<f64>>,
}

impl HsiCube {
    /// Builds a cube from band-sequential values (`band`, then row, then column).
    pub fn new(width: usize, height: usize, bands: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || bands == 0 {
            return Err(Error::Shape(format!("empty cube {width}x{height}x{bands}")));
        }
        if values.len() != width * height * bands {
            return Err(Error::Shape(format!(
                "cube {width}x{height}x{bands} needs {} values, got {}",
                width * height * bands,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("non-finite reflectance at index {i}")));
        }
        Ok(Self { width, height, bands, values, labels: None, wavelengths: None })
    }

    /// Builds a cube from a pixel-major `N × bands` matrix (row-major pixels).
    pub fn from_pixels(width: usize, height: usize, bands: usize, pixels: &[f64]) -> Result<Self> {
        let n = width * height;
        if pixels.len() != n * bands {
            return Err(Error::Shape(format!(
                "{} pixel values for a {width}x{height}x{bands} cube",
                pixels.len()
            )));
        }
        let mut values = vec![0.0; pixels.len()];
        for (p, spectrum) in pixels.chunks(bands).enumerate() {
            for (b, v) in spectrum.iter().enumerate() {
                values[b * n + p] = *v;
            }
        }
        Self::new(width, height, bands, values)
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != self.pixel_count() {
            return Err(Error::Shape(format!(
                "{} labels for {} pixels",
                labels.len(),
                self.pixel_count()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_wavelengths(mut self, wavelengths: Vec<f64>) -> Result<Self> {
        if wavelengths.len() != self.bands {
            return Err(Error::Shape(format!(
                "{} wavelengths for {} bands",
                wavelengths.len(),
                self.bands
            )));
        }
        self.wavelengths = Some(wavelengths);
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let n = self.pixel_count();
        &self.values[b * n..(b + 1) * n]
    }

    pub fn value(&self, x: usize, y: usize, b: usize) -> f64 {
        self.values[b * self.pixel_count() + y * self.width + x]
    }

    pub fn spectrum(&self, x: usize, y: usize) -> Vec<f64> {
        (0..self.bands).map(|b| self.value(x, y, b)).collect()
    }

    /// Whether pixel `(x, y)` carries ground-truth label 0.
    pub fn is_background(&self, x: usize, y: usize) -> bool {
        self.labels.as_ref().is_some_and(|l| l[y * self.width + x] == 0)
    }

    /// Pixel-major `N × bands` copy of the values, pixels in row-major order.
    pub fn pixel_matrix(&self) -> Vec<f64> {
        let n = self.pixel_count();
        let mut out = vec![0.0; self.values.len()];
        for b in 0..self.bands {
            for (p, v) in self.band(b).iter().enumerate() {
                out[p * self.bands + b] = *v;
            }
        }
        debug_assert_eq!(out.len(), n * self.bands);
        out
    }

    /// Replaces the spectral content, keeping the spatial grid and labels.
    pub fn with_pixel_matrix(&self, bands: usize, pixels: &[f64]) -> Result<Self> {
        let mut cube = Self::from_pixels(self.width, self.height, bands, pixels)?;
        cube.labels = self.labels.clone();
        Ok(cube)
    }
}

/// Per-band min-max scaling to `[0, 1]`; constant bands become all zeros.
pub fn normalize(cube: &HsiCube) -> HsiCube {
    let n = cube.pixel_count();
    let mut values = Vec::with_capacity(cube.values.len());
    for b in 0..cube.bands {
        let band = &cube.values[b * n..(b + 1) * n];
        let (lo, hi) = band
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        if range > 0.0 {
            values.extend(band.iter().map(|v| (v - lo) / range));
        } else {
            values.extend(std::iter::repeat_n(0.0, n));
        }
    }
    HsiCube { values, ..cube.clone() }
}

/// Per-pixel cluster labels, `1..=J`; 0 is never produced by a clusterer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    /// Pixels without ground truth; labeled anyway, flagged here.
    pub background: Option<Vec<bool>>,
}

impl SegmentationMap {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} labels for a {width}x{height} map",
                labels.len()
            )));
        }
        Ok(Self { width, height, labels, background: None })
    }

    pub fn with_background_from(mut self, truth: Option<&[u32]>) -> Self {
        self.background = truth.map(|t| t.iter().map(|&l| l == 0).collect());
        self
    }

    pub fn cluster_count(&self) -> usize {
        let mut seen: Vec<u32> = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }
}
