use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::hsi::HsiCube;
use crate::{Error, Result};

/// Principal axes of a pixel set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub bands: usize,
    pub dims: usize,
    pub mean: Vec<f64>,
    /// Row-major `dims × bands`, orthonormal rows.
    pub components: Vec<f64>,
    /// Eigenvalues of the (1/N) covariance, non-increasing.
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.bands..(i + 1) * self.bands]
    }
}

/// Fits PCA on row-major `N × bands` pixels via the covariance eigendecomposition.
///
/// Each component is oriented so its largest-magnitude coordinate is positive.
pub fn pca_fit(pixels: &[f64], bands: usize, dims: usize) -> Result<PcaModel> {
    if bands == 0 || pixels.len() % bands != 0 {
        return Err(Error::Shape(format!("{} values do not form {bands}-band pixels", pixels.len())));
    }
    let n = pixels.len() / bands;
    if n <= dims {
        return Err(Error::InsufficientData(format!("{n} pixels for {dims} components")));
    }
    if dims == 0 || bands < dims {
        return Err(Error::Parameter(format!("cannot extract {dims} components from {bands} bands")));
    }
    let mut mean = vec![0.0; bands];
    for p in pixels.chunks(bands) {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = DMatrix::<f64>::zeros(bands, bands);
    let mut centered = vec![0.0; bands];
    for p in pixels.chunks(bands) {
        for ((c, v), m) in centered.iter_mut().zip(p).zip(&mean) {
            *c = v - m;
        }
        for a in 0..bands {
            for b in 0..=a {
                cov[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..bands {
        for b in 0..=a {
            let v = cov[(a, b)] / n as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..bands).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));

    let mut components = Vec::with_capacity(dims * bands);
    let mut explained_variance = Vec::with_capacity(dims);
    for &i in order.iter().take(dims) {
        let col = eig.eigenvectors.column(i);
        let pivot = (0..bands).fold(0, |best, t| if col[t].abs() > col[best].abs() { t } else { best });
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        components.extend(col.iter().map(|v| v * sign));
        explained_variance.push(eig.eigenvalues[i].max(0.0));
    }
    Ok(PcaModel { bands, dims, mean, components, explained_variance })
}

/// Projects row-major `N × bands` pixels to `N × dims` scores.
pub fn pca_transform(model: &PcaModel, pixels: &[f64], bands: usize) -> Result<Vec<f64>> {
    if bands != model.bands || pixels.len() % bands != 0 {
        return Err(Error::Shape(format!(
            "model expects {} bands, got {bands} ({} values)",
            model.bands,
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(pixels.len() / bands * model.dims);
    let mut centered = vec![0.0; bands];
    for p in pixels.chunks(bands) {
        for ((c, v), m) in centered.iter_mut().zip(p).zip(&model.mean) {
            *c = v - m;
        }
        for comp in model.components.chunks(bands) {
            out.push(comp.iter().zip(&centered).map(|(a, b)| a * b).sum());
        }
    }
    Ok(out)
}

/// Fits PCA on every pixel of `cube` and returns the `dims`-band score cube.
pub fn pca_reduce_cube(cube: &HsiCube, dims: usize) -> Result<(PcaModel, HsiCube)> {
    let pixels = cube.pixel_matrix();
    let model = pca_fit(&pixels, cube.bands(), dims)?;
    let scores = pca_transform(&model, &pixels, cube.bands())?;
    let reduced = cube.with_pixel_matrix(dims, &scores)?;
    Ok((model, reduced))
}
