//! `.hsic` cube and `.gt` label files.
//!
//! Both are a small JSON header pointing at a raw little-endian payload that
//! lives next to it. Cubes store `f32` samples band-sequentially; label
//! rasters store `u16` values row-major, 0 meaning background.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HsiCube;
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct CubeHeader {
    width: usize,
    height: usize,
    bands: usize,
    dtype: String,
    interleave: String,
    data: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wavelengths: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelHeader {
    width: usize,
    height: usize,
    classes: usize,
    #[serde(default = "default_label_dtype")]
    dtype: String,
    data: String,
}

fn default_label_dtype() -> String {
    "u16".into()
}

/// A decoded `.gt` raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRaster {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub labels: Vec<u32>,
}

fn read_header<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn payload_path(header: &Path, data: &str) -> PathBuf {
    header.parent().unwrap_or_else(|| Path::new(".")).join(data)
}

fn read_payload(path: &Path, expected: u64) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch { expected, found: bytes.len() as u64 });
    }
    Ok(bytes)
}

fn payload_name(header: &Path, ext: &str) -> Result<String> {
    let stem = header
        .file_stem()
        .ok_or_else(|| Error::Format(format!("{} has no file name", header.display())))?;
    Ok(format!("{}.{ext}", stem.to_string_lossy()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a cube from its `.hsic` header.
pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    let path = path.as_ref();
    let header: CubeHeader = read_header(path)?;
    if header.dtype != "f32" {
        return Err(Error::Format(format!("unsupported dtype {:?}", header.dtype)));
    }
    if header.interleave != "bsq" {
        return Err(Error::Format(format!("unsupported interleave {:?}", header.interleave)));
    }
    if header.width == 0 || header.height == 0 || header.bands == 0 {
        return Err(Error::Format("cube header has a zero dimension".into()));
    }
    let count = header.width * header.height * header.bands;
    let bytes = read_payload(&payload_path(path, &header.data), count as u64 * 4)?;
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format(format!("{}: payload has non-finite samples", path.display())));
    }
    let cube = HsiCube::new(header.width, header.height, header.bands, values)?;
    match header.wavelengths {
        Some(w) => cube.with_wavelengths(w),
        None => Ok(cube),
    }
}

/// Writes `cube` to a `.hsic` header plus a sibling `.bsq` payload.
pub fn write_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let data = payload_name(path, "bsq")?;
    let header = CubeHeader {
        width: cube.width(),
        height: cube.height(),
        bands: cube.bands(),
        dtype: "f32".into(),
        interleave: "bsq".into(),
        data: data.clone(),
        wavelengths: cube.wavelengths().map(<[f64]>::to_vec),
    };
    let mut bytes = Vec::with_capacity(cube.values().len() * 4);
    for v in cube.values() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    write_file(&payload_path(path, &data), &bytes)?;
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    write_file(path, json.as_bytes())
}

/// Reads a `.gt` label raster.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelRaster> {
    let path = path.as_ref();
    let header: LabelHeader = read_header(path)?;
    if header.dtype != "u16" {
        return Err(Error::Format(format!("unsupported label dtype {:?}", header.dtype)));
    }
    let count = header.width * header.height;
    let bytes = read_payload(&payload_path(path, &header.data), count as u64 * 2)?;
    let labels = bytes
        .chunks_exact(2)
        .map(|c| u32::from(u16::from_le_bytes([c[0], c[1]])))
        .collect();
    Ok(LabelRaster { width: header.width, height: header.height, classes: header.classes, labels })
}

/// Writes a `.gt` header plus a sibling `.u16` payload.
pub fn write_labels(path: impl AsRef<Path>, width: usize, height: usize, labels: &[u32]) -> Result<()> {
    let path = path.as_ref();
    if labels.len() != width * height {
        return Err(Error::Shape(format!("{} labels for a {width}x{height} raster", labels.len())));
    }
    let mut bytes = Vec::with_capacity(labels.len() * 2);
    for &l in labels {
        let v = u16::try_from(l).map_err(|_| Error::Parameter(format!("label {l} exceeds u16")))?;
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let data = payload_name(path, "u16")?;
    let header = LabelHeader {
        width,
        height,
        classes: labels.iter().copied().max().unwrap_or(0) as usize,
        dtype: default_label_dtype(),
        data: data.clone(),
    };
    write_file(&payload_path(path, &data), &bytes)?;
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    write_file(path, json.as_bytes())
}

/// Sample order of a raw vendor payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interleave {
    /// Band sequential: band, row, column.
    Bsq,
    /// Band interleaved by line: row, band, column.
    Bil,
    /// Band interleaved by pixel: row, column, band.
    Bip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleType {
    U8,
    U16,
    I16,
    I32,
    F32,
    F64,
}

impl SampleType {
    pub fn size(self) -> usize {
        match self {
            SampleType::U8 => 1,
            SampleType::U16 | SampleType::I16 => 2,
            SampleType::I32 | SampleType::F32 => 4,
            SampleType::F64 => 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ByteOrder {
    Little,
    Big,
}

/// Describes a headerless raw payload, e.g. the binary half of an ENVI pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawLayout {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub interleave: Interleave,
    pub sample: SampleType,
    pub byte_order: ByteOrder,
    /// Bytes to skip before the first sample.
    pub offset: usize,
}

fn decode(bytes: &[u8], sample: SampleType, order: ByteOrder) -> f64 {
    macro_rules! num {
        ($t:ty, $n:literal) => {{
            let arr: [u8; $n] = bytes.try_into().expect("sample width");
            match order {
                ByteOrder::Little => <$t>::from_le_bytes(arr) as f64,
                ByteOrder::Big => <$t>::from_be_bytes(arr) as f64,
            }
        }};
    }
    match sample {
        SampleType::U8 => f64::from(bytes[0]),
        SampleType::U16 => num!(u16, 2),
        SampleType::I16 => num!(i16, 2),
        SampleType::I32 => num!(i32, 4),
        SampleType::F32 => num!(f32, 4),
        SampleType::F64 => num!(f64, 8),
    }
}

/// Decodes a raw payload with an explicit layout into a cube.
pub fn convert_raw(bytes: &[u8], layout: &RawLayout) -> Result<HsiCube> {
    let RawLayout { width, height, bands, interleave, sample, byte_order, offset } = *layout;
    let size = sample.size();
    let count = width * height * bands;
    let expected = (offset + count * size) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch { expected, found: bytes.len() as u64 });
    }
    let body = &bytes[offset..];
    let n = width * height;
    let mut values = vec![0.0; count];
    for y in 0..height {
        for x in 0..width {
            for b in 0..bands {
                let src = match interleave {
                    Interleave::Bsq => b * n + y * width + x,
                    Interleave::Bil => (y * bands + b) * width + x,
                    Interleave::Bip => (y * width + x) * bands + b,
                };
                values[b * n + y * width + x] = decode(&body[src * size..(src + 1) * size], sample, byte_order);
            }
        }
    }
    HsiCube::new(width, height, bands, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_value_cube() {
        let dir = tempfile::tempdir().unwrap();
        let header = dir.path().join("c.hsic");
        fs::write(
            &header,
            r#"{"width":2,"height":2,"bands":3,"dtype":"f32","interleave":"bsq","data":"c.bsq"}"#,
        )
        .unwrap();
        let payload: Vec<u8> = (0..12).flat_map(|i| (i as f32).to_le_bytes()).collect();
        assert_eq!(payload.len(), 48);
        fs::write(dir.path().join("c.bsq"), &payload).unwrap();
        let cube = load_cube(&header).unwrap();
        assert_eq!(cube.values().len(), 12);
        assert_eq!(cube.value(1, 0, 0), 1.0);
        assert_eq!(cube.value(0, 1, 1), 6.0);

        fs::write(dir.path().join("c.bsq"), &payload[..44]).unwrap();
        assert!(matches!(
            load_cube(&header),
            Err(Error::SizeMismatch { expected: 48, found: 44 })
        ));
    }

    #[test]
    fn garbled_header() {
        let dir = tempfile::tempdir().unwrap();
        let header = dir.path().join("bad.hsic");
        fs::write(&header, "{ not json").unwrap();
        assert!(matches!(load_cube(&header), Err(Error::Format(_))));
        fs::write(
            &header,
            r#"{"width":1,"height":1,"bands":1,"dtype":"f64","interleave":"bsq","data":"x"}"#,
        )
        .unwrap();
        assert!(matches!(load_cube(&header), Err(Error::Format(_))));
        assert!(matches!(load_cube(dir.path().join("missing.hsic")), Err(Error::Io { .. })));
    }

    #[test]
    fn cube_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let values: Vec<f64> = (0..30).map(|i| f64::from(i) * 0.25).collect();
        let cube = HsiCube::new(3, 2, 5, values)
            .unwrap()
            .with_wavelengths(vec![400.0, 450.0, 500.0, 550.0, 600.0])
            .unwrap();
        let path = dir.path().join("r.hsic");
        write_cube(&cube, &path).unwrap();
        assert_eq!(load_cube(&path).unwrap(), cube);
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gt");
        let labels = vec![0, 1, 2, 3, 3, 1];
        write_labels(&path, 3, 2, &labels).unwrap();
        let raster = load_labels(&path).unwrap();
        assert_eq!(raster.labels, labels);
        assert_eq!(raster.classes, 3);
        assert!(write_labels(&path, 2, 2, &labels).is_err());
    }

    #[test]
    fn raw_interleaves_agree() {
        // 2x1 pixels, 3 bands; value = 10*band + x.
        let bsq: Vec<u8> = [0u16, 1, 10, 11, 20, 21].iter().flat_map(|v| v.to_be_bytes()).collect();
        let bip: Vec<u8> = [0u16, 10, 20, 1, 11, 21].iter().flat_map(|v| v.to_be_bytes()).collect();
        let mut layout = RawLayout {
            width: 2,
            height: 1,
            bands: 3,
            interleave: Interleave::Bsq,
            sample: SampleType::U16,
            byte_order: ByteOrder::Big,
            offset: 0,
        };
        let a = convert_raw(&bsq, &layout).unwrap();
        layout.interleave = Interleave::Bip;
        let b = convert_raw(&bip, &layout).unwrap();
        layout.interleave = Interleave::Bil;
        let c = convert_raw(&bsq, &layout).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c); // one row: BIL and BSQ coincide
        assert_eq!(a.value(1, 0, 2), 21.0);
        assert!(convert_raw(&bsq[..10], &layout).is_err());
    }
}
