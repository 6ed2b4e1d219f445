//! Labeled synthetic scenes with known class structure.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::hsi::HsiCube;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub classes: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { width: 32, height: 32, bands: 40, classes: 4, noise_sigma: 0.01, seed: 0 }
    }
}

/// Mean spectrum of every class: a Gaussian bump on a flat floor, with the
/// bumps spread evenly across the bands. Row-major `classes × bands`.
pub fn class_signatures(bands: usize, classes: usize) -> Vec<f64> {
    let width = (bands as f64 / (2.0 * classes as f64)).max(1.0);
    (0..classes)
        .flat_map(|g| {
            let center = (g as f64 + 0.5) / classes as f64 * bands as f64;
            (0..bands).map(move |b| {
                let d = b as f64 + 0.5 - center;
                0.2 + 0.6 * (-d * d / (2.0 * width * width)).exp()
            })
        })
        .collect()
}

/// Smallest Euclidean distance between two class signatures.
pub fn min_separation(signatures: &[f64], bands: usize) -> f64 {
    let rows: Vec<&[f64]> = signatures.chunks(bands).collect();
    let mut best = f64::INFINITY;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let d: f64 = rows[i].iter().zip(rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            best = best.min(d.sqrt());
        }
    }
    best
}

/// Class of row `y`: the scene is cut into `classes` horizontal stripes.
pub fn stripe_class(y: usize, height: usize, classes: usize) -> u32 {
    (y * classes / height) as u32 + 1
}

/// Noisy striped scene with ground truth `1..=classes`.
pub fn generate(config: &SynthConfig) -> Result<HsiCube> {
    let SynthConfig { width, height, bands, classes, noise_sigma, seed } = *config;
    if classes < 2 || classes > height {
        return Err(Error::Parameter(format!("{classes} classes on {height} rows")));
    }
    if bands == 0 || width == 0 {
        return Err(Error::Parameter("empty scene".into()));
    }
    let noise = Normal::new(0.0, noise_sigma)
        .map_err(|e| Error::Parameter(format!("noise level {noise_sigma}: {e}")))?;
    let signatures = class_signatures(bands, classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(width * height * bands);
    let mut labels = Vec::with_capacity(width * height);
    for y in 0..height {
        let class = stripe_class(y, height, classes);
        let sig = &signatures[(class as usize - 1) * bands..class as usize * bands];
        for _ in 0..width {
            labels.push(class);
            pixels.extend(sig.iter().map(|s| s + noise.sample(&mut rng)));
        }
    }
    HsiCube::from_pixels(width, height, bands, &pixels)?.with_labels(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stripes_and_labels() {
        let cube = generate(&SynthConfig { width: 4, height: 8, bands: 6, classes: 4, ..Default::default() }).unwrap();
        let labels = cube.labels().unwrap();
        assert_eq!(&labels[..4], &[1; 4]);
        assert_eq!(&labels[28..], &[4; 4]);
        let mut counts = [0; 4];
        for &l in labels {
            counts[l as usize - 1] += 1;
        }
        assert_eq!(counts, [8; 4]);
    }

    #[test]
    fn separation_dominates_noise() {
        let sig = class_signatures(40, 4);
        assert!(min_separation(&sig, 40) >= 10.0 * 0.01 * (40f64).sqrt());
    }

    #[test]
    fn noise_free_pixels_are_signatures() {
        let cfg = SynthConfig { width: 3, height: 6, bands: 5, classes: 3, noise_sigma: 0.0, seed: 2 };
        let cube = generate(&cfg).unwrap();
        let sig = class_signatures(5, 3);
        assert_eq!(cube.spectrum(1, 5), &sig[10..15]);
    }

    #[test]
    fn seeded() {
        let cfg = SynthConfig { width: 5, height: 5, bands: 3, classes: 2, ..Default::default() };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        assert!(generate(&SynthConfig { classes: 1, ..cfg }).is_err());
    }
}
