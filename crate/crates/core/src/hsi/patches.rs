use std::sync::Arc;

use super::HsiCube;
use crate::autodiff::Tensor;
use crate::{Error, Result};

/// One `spatial × spatial × bands` patch per selected pixel.
///
/// Patches are cut on demand from a mirror-padded, band-interleaved copy of
/// the cube, so a batch over a whole scene costs one extra cube of memory.
#[derive(Clone, Debug)]
pub struct PatchBatch {
    spatial: usize,
    bands: usize,
    padded_width: usize,
    padded: Arc<[f64]>,
    coords: Vec<(usize, usize)>,
}

impl PatchBatch {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn spatial(&self) -> usize {
        self.spatial
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn patch_shape(&self) -> [usize; 3] {
        [self.spatial, self.spatial, self.bands]
    }

    /// Source pixel `(x, y)` of every patch.
    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }

    /// Patch `i` as a `[spatial, spatial, bands]` tensor indexed `[row, col, band]`.
    pub fn patch(&self, i: usize) -> Tensor {
        let (x, y) = self.coords[i];
        let s = self.spatial;
        let row_len = s * self.bands;
        let mut data = Vec::with_capacity(s * row_len);
        for dy in 0..s {
            let start = ((y + dy) * self.padded_width + x) * self.bands;
            data.extend_from_slice(&self.padded[start..start + row_len]);
        }
        Tensor::new(vec![s, s, self.bands], data).expect("patch extent")
    }

    pub fn patches(&self) -> impl Iterator<Item = Tensor> + '_ {
        (0..self.len()).map(|i| self.patch(i))
    }

    /// Sub-batch over the given patch indices, sharing the padded cube.
    pub fn select(&self, indices: &[usize]) -> PatchBatch {
        PatchBatch {
            coords: indices.iter().map(|&i| self.coords[i]).collect(),
            ..self.clone()
        }
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

fn build(cube: &HsiCube, spatial: usize, keep_background: bool) -> Result<PatchBatch> {
    if spatial % 2 == 0 || spatial == 0 {
        return Err(Error::Parameter(format!("patch size {spatial} must be odd")));
    }
    if spatial > cube.width().min(cube.height()) {
        return Err(Error::Parameter(format!(
            "patch size {spatial} exceeds cube extent {}x{}",
            cube.width(),
            cube.height()
        )));
    }
    let half = (spatial / 2) as isize;
    let (w, h, b) = (cube.width(), cube.height(), cube.bands());
    let pw = w + spatial - 1;
    let ph = h + spatial - 1;
    let mut padded = vec![0.0; pw * ph * b];
    for py in 0..ph {
        let sy = reflect(py as isize - half, h);
        for px in 0..pw {
            let sx = reflect(px as isize - half, w);
            let dst = (py * pw + px) * b;
            for band in 0..b {
                padded[dst + band] = cube.value(sx, sy, band);
            }
        }
    }
    let coords = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| keep_background || !cube.is_background(x, y))
        .collect();
    Ok(PatchBatch {
        spatial,
        bands: b,
        padded_width: pw,
        padded: padded.into(),
        coords,
    })
}

/// One patch per non-background pixel, row-major by center, borders mirrored.
pub fn extract_patches(cube: &HsiCube, spatial: usize) -> Result<PatchBatch> {
    build(cube, spatial, false)
}

/// One patch per pixel including background, for full-scene inference.
pub fn extract_all_patches(cube: &HsiCube, spatial: usize) -> Result<PatchBatch> {
    build(cube, spatial, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize, b: usize) -> HsiCube {
        let values = (0..w * h * b).map(|v| v as f64).collect();
        HsiCube::new(w, h, b, values).unwrap()
    }

    #[test]
    fn one_patch_per_pixel() {
        let batch = extract_patches(&ramp(5, 5, 2), 5).unwrap();
        assert_eq!(batch.len(), 25);
        assert_eq!(batch.coords()[1], (1, 0));
        assert_eq!(batch.coords()[5], (0, 1));
    }

    #[test]
    fn interior_patch_is_raw_window() {
        let cube = ramp(9, 9, 3);
        let batch = extract_patches(&cube, 5).unwrap();
        let idx = 4 * 9 + 4;
        let p = batch.patch(idx);
        for dy in 0..5 {
            for dx in 0..5 {
                for b in 0..3 {
                    assert_eq!(p.data()[(dy * 5 + dx) * 3 + b], cube.value(2 + dx, 2 + dy, b));
                }
            }
        }
    }

    #[test]
    fn corner_rows_reflect() {
        let cube = ramp(6, 7, 1);
        let batch = extract_patches(&cube, 5).unwrap();
        let p = batch.patch(0);
        // Rows −2..=2 map to 2,1,0,1,2; columns likewise.
        let map = [2, 1, 0, 1, 2];
        for (dy, &sy) in map.iter().enumerate() {
            for (dx, &sx) in map.iter().enumerate() {
                assert_eq!(p.data()[dy * 5 + dx], cube.value(sx, sy, 0));
            }
        }
    }

    #[test]
    fn background_excluded() {
        let cube = ramp(5, 5, 1).with_labels((0..25).map(|i| (i % 3) as u32).collect()).unwrap();
        let batch = extract_patches(&cube, 3).unwrap();
        assert_eq!(batch.len(), 25 - 9);
        assert_eq!(extract_all_patches(&cube, 3).unwrap().len(), 25);
    }

    #[test]
    fn parameter_errors() {
        let cube = ramp(5, 5, 1);
        assert!(matches!(extract_patches(&cube, 4), Err(Error::Parameter(_))));
        assert!(matches!(extract_patches(&cube, 7), Err(Error::Parameter(_))));
    }
}
