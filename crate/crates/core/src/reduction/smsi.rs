use std::ops::Range;

use crate::hsi::HsiCube;
use crate::{Error, Result};

/// Non-overlapping band windows: `target − 1` windows of width `⌊B/target⌋`,
/// the last window taking every remaining band.
pub fn smsi_windows(bands: usize, target: usize) -> Result<Vec<Range<usize>>> {
    if target == 0 || bands < target {
        return Err(Error::Parameter(format!("cannot reduce {bands} bands to {target}")));
    }
    let width = bands / target;
    Ok((0..target)
        .map(|i| {
            let start = i * width;
            let end = if i + 1 == target { bands } else { start + width };
            start..end
        })
        .collect())
}

/// Simulated multispectral cube: each output band is the mean of one window.
pub fn smsi_reduce(cube: &HsiCube, target: usize) -> Result<HsiCube> {
    let windows = smsi_windows(cube.bands(), target)?;
    let n = cube.pixel_count();
    let mut values = Vec::with_capacity(n * target);
    for w in &windows {
        let scale = 1.0 / w.len() as f64;
        let mut acc = vec![0.0; n];
        for b in w.clone() {
            for (a, v) in acc.iter_mut().zip(cube.band(b)) {
                *a += v;
            }
        }
        values.extend(acc.into_iter().map(|a| a * scale));
    }
    let mut out = HsiCube::new(cube.width(), cube.height(), target, values)?;
    if let Some(labels) = cube.labels() {
        out = out.with_labels(labels.to_vec())?;
    }
    if let Some(wl) = cube.wavelengths() {
        let centers = windows
            .iter()
            .map(|w| wl[w.clone()].iter().sum::<f64>() / w.len() as f64)
            .collect();
        out = out.with_wavelengths(centers)?;
    }
    Ok(out)
}
