use std::fs;
use std::path::Path;

use hsiseg::hsi::SegmentationMap;
use hsiseg::{Error, Result};

/// Fixed cluster colors; label `l` gets entry `(l - 1) % 32`, label 0 is black.
pub const PALETTE: [[u8; 3]; 32] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
    [128, 128, 0],
    [255, 215, 180],
    [0, 0, 128],
    [128, 128, 128],
    [255, 255, 255],
    [31, 119, 180],
    [174, 199, 232],
    [255, 127, 14],
    [44, 160, 44],
    [152, 223, 138],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [188, 189, 34],
    [23, 190, 207],
];

pub fn color(label: u32) -> [u8; 3] {
    if label == 0 {
        [0, 0, 0]
    } else {
        PALETTE[(label as usize - 1) % PALETTE.len()]
    }
}

/// Binary (P6) PPM image of a map.
pub fn ppm_bytes(map: &SegmentationMap) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", map.width, map.height).into_bytes();
    for &l in &map.labels {
        out.extend_from_slice(&color(l));
    }
    out
}

pub fn write_ppm(path: &Path, map: &SegmentationMap) -> Result<()> {
    fs::write(path, ppm_bytes(map)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_is_distinct_and_wraps() {
        let mut seen = PALETTE.to_vec();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 32);
        assert!(!PALETTE.contains(&[0, 0, 0]));
        assert_eq!(color(1), color(33));
        assert_eq!(color(0), [0, 0, 0]);
    }

    #[test]
    fn ppm_layout() {
        let map = SegmentationMap::new(2, 1, vec![1, 2]).unwrap();
        let bytes = ppm_bytes(&map);
        assert!(bytes.starts_with(b"P6\n2 1\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[230, 25, 75, 60, 180, 75]);
    }
}
