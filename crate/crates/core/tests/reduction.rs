use hsiseg::hsi::HsiCube;
use hsiseg::reduction::{pca_fit, pca_transform, smsi_reduce, smsi_windows};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pixels(n: usize, bands: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Correlated bands so the spectrum is not isotropic.
    (0..n)
        .flat_map(|_| {
            let base: f64 = rng.random_range(-1.0..1.0);
            (0..bands).map(|b| base * (b as f64 + 1.0) + rng.random_range(-0.3..0.3)).collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn common_band_counts_reduce_to_25() {
    for b in [103usize, 200, 224] {
        let w = smsi_windows(b, 25).unwrap();
        assert_eq!(w.len(), 25);
        let width = b / 25;
        for (i, r) in w.iter().enumerate() {
            assert_eq!(r.start, i * width);
            let end = if i == 24 { b } else { (i + 1) * width };
            assert_eq!(r.end, end);
        }
        let cube = HsiCube::new(2, 1, b, (0..2 * b).map(|v| v as f64).collect()).unwrap();
        assert_eq!(smsi_reduce(&cube, 25).unwrap().bands(), 25);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn smsi_band_count(bands in 25usize..300) {
        prop_assert_eq!(smsi_windows(bands, 25).unwrap().len(), 25);
    }

    #[test]
    fn smsi_commutes_with_scaling(bands in 25usize..80, c in -5.0f64..5.0, seed in any::<u64>()) {
        let px = pixels(6, bands, seed);
        let cube = HsiCube::from_pixels(3, 2, bands, &px).unwrap();
        let scaled = HsiCube::from_pixels(3, 2, bands, &px.iter().map(|v| c * v).collect::<Vec<_>>()).unwrap();
        let a = smsi_reduce(&cube, 25).unwrap();
        let b = smsi_reduce(&scaled, 25).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((c * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn pca_ignores_constant_offset(bands in 2usize..6, dims in 1usize..3, seed in any::<u64>(), offset in prop::collection::vec(-50.0f64..50.0, 6)) {
        prop_assume!(dims <= bands);
        let px = pixels(80, bands, seed);
        let moved: Vec<f64> = px.chunks(bands).flat_map(|p| p.iter().zip(&offset).map(|(v, o)| v + o).collect::<Vec<_>>()).collect();
        let a = pca_transform(&pca_fit(&px, bands, dims).unwrap(), &px, bands).unwrap();
        let b = pca_transform(&pca_fit(&moved, bands, dims).unwrap(), &moved, bands).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-8, "{x} vs {y}");
        }
    }

    #[test]
    fn pca_axes_orthonormal_and_scores_decorrelated(bands in 2usize..7, seed in any::<u64>()) {
        let px = pixels(200, bands, seed);
        let model = pca_fit(&px, bands, bands).unwrap();
        for i in 0..bands {
            for j in 0..bands {
                let d: f64 = model.component(i).iter().zip(model.component(j)).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((d - want).abs() <= 1e-9);
            }
        }
        let scores = pca_transform(&model, &px, bands).unwrap();
        let n = 200.0;
        for i in 0..bands {
            for j in 0..bands {
                let cov: f64 = scores.chunks(bands).map(|s| s[i] * s[j]).sum::<f64>() / n;
                if i == j {
                    prop_assert!((cov - model.explained_variance[i]).abs() <= 1e-8 * (1.0 + cov.abs()));
                } else {
                    prop_assert!(cov.abs() <= 1e-8);
                }
            }
        }
    }
}
