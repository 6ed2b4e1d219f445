use std::fs;
use std::path::Path;

use rand::Rng;

use super::CaeConfig;
use crate::autodiff::Tensor;
use crate::{Error, Result};

/// Names of the autoencoder weight tensors, in storage order.
pub const PARAM_NAMES: [&str; 12] = [
    "enc_conv1.kernels",
    "enc_conv1.bias",
    "enc_conv2.kernels",
    "enc_conv2.bias",
    "enc_dense.weights",
    "enc_dense.bias",
    "dec_dense.weights",
    "dec_dense.bias",
    "dec_conv2.kernels",
    "dec_conv2.bias",
    "dec_conv1.kernels",
    "dec_conv1.bias",
];

pub const ENC_CONV1_W: usize = 0;
pub const ENC_CONV1_B: usize = 1;
pub const ENC_CONV2_W: usize = 2;
pub const ENC_CONV2_B: usize = 3;
pub const ENC_DENSE_W: usize = 4;
pub const ENC_DENSE_B: usize = 5;
pub const DEC_DENSE_W: usize = 6;
pub const DEC_DENSE_B: usize = 7;
pub const DEC_CONV2_W: usize = 8;
pub const DEC_CONV2_B: usize = 9;
pub const DEC_CONV1_W: usize = 10;
pub const DEC_CONV1_B: usize = 11;

const CENTERS_NAME: &str = "centers";
const MAGIC: &[u8; 8] = b"HSICAE01";

/// All trainable state: autoencoder weights plus the `J × n` cluster centers.
#[derive(Clone, Debug, PartialEq)]
pub struct CaeParams {
    config: CaeConfig,
    weights: Vec<Tensor>,
    centers: Option<Tensor>,
}

fn expected_shapes(c: &CaeConfig) -> [Vec<usize>; 12] {
    let (k, s, d, n, f) = (c.kernels_per_layer, c.kernel_spatial, c.kernel_depth, c.embedding_dim, c.flat_len());
    [
        vec![k, 1, s, s, d],
        vec![k],
        vec![k, k, s, s, d],
        vec![k],
        vec![n, f],
        vec![n],
        vec![f, n],
        vec![f],
        vec![k, k, s, s, d],
        vec![k],
        vec![k, 1, s, s, d],
        vec![1],
    ]
}

/// Inputs feeding one output element, used for the init range.
fn fan_in(index: usize, shape: &[usize]) -> usize {
    match index {
        ENC_CONV1_W | ENC_CONV2_W => shape[1..].iter().product(),
        DEC_CONV2_W | DEC_CONV1_W => shape[0] * shape[2..].iter().product::<usize>(),
        ENC_DENSE_W | DEC_DENSE_W => shape[1],
        _ => 1,
    }
}

/// Builds an autoencoder with weights uniform in `±√(6/fan_in)`, zero biases and no centers.
pub fn build_cae<R: Rng + ?Sized>(config: &CaeConfig, rng: &mut R) -> Result<CaeParams> {
    config.validate()?;
    let weights = expected_shapes(config)
        .into_iter()
        .enumerate()
        .map(|(i, shape)| {
            if i % 2 == 1 {
                return Tensor::zeros(&shape);
            }
            let limit = (6.0 / fan_in(i, &shape) as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
            Tensor::new(shape, data).expect("shape product")
        })
        .collect();
    Ok(CaeParams { config: config.clone(), weights, centers: None })
}

impl CaeParams {
    pub fn config(&self) -> &CaeConfig {
        &self.config
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Tensor] {
        &mut self.weights
    }

    pub fn weight(&self, index: usize) -> &Tensor {
        &self.weights[index]
    }

    pub fn weight_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.weights[index]
    }

    pub fn centers(&self) -> Option<&Tensor> {
        self.centers.as_ref()
    }

    pub fn centers_mut(&mut self) -> Option<&mut Tensor> {
        self.centers.as_mut()
    }

    /// Weights and centers borrowed mutably at once.
    pub fn tensors_mut(&mut self) -> (&mut [Tensor], Option<&mut Tensor>) {
        (&mut self.weights, self.centers.as_mut())
    }

    /// Installs `J × n` cluster centers.
    pub fn set_centers(&mut self, centers: Tensor) -> Result<()> {
        let want = [self.config.clusters, self.config.embedding_dim];
        if centers.shape() != want {
            return Err(Error::Shape(format!(
                "centers must be {want:?}, got {:?}",
                centers.shape()
            )));
        }
        if !centers.is_finite() {
            return Err(Error::Numerical("non-finite cluster center".into()));
        }
        self.centers = Some(centers);
        Ok(())
    }

    /// All weights plus centers (when set), each with its checkpoint name.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out: Vec<_> = PARAM_NAMES.iter().copied().zip(&self.weights).collect();
        if let Some(c) = &self.centers {
            out.push((CENTERS_NAME, c));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Serializes to the checkpoint layout described in the README.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let json = serde_json::to_vec(&self.config).expect("config serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let tensors = self.named_tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let json_len = r.u32()? as usize;
        let config: CaeConfig = serde_json::from_slice(r.take(json_len)?)
            .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        config.validate()?;
        let shapes = expected_shapes(&config);
        let count = r.u32()? as usize;
        let mut weights = Vec::with_capacity(12);
        let mut centers = None;
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_owned();
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let tensor = Tensor::new(shape, data)?;
            if name == CENTERS_NAME {
                centers = Some(tensor);
                continue;
            }
            let idx = weights.len();
            if idx >= 12 || PARAM_NAMES[idx] != name || shapes[idx] != tensor.shape() {
                return Err(Error::Format(format!("unexpected tensor {name:?} {:?}", tensor.shape())));
            }
            weights.push(tensor);
        }
        if weights.len() != 12 || r.pos != bytes.len() {
            return Err(Error::Format("truncated or oversized checkpoint".into()));
        }
        let mut params = CaeParams { config, weights, centers: None };
        if let Some(c) = centers {
            params.set_centers(c).map_err(|e| Error::Format(format!("checkpoint centers: {e}")))?;
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint ends early".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mirrored_shapes() {
        let cfg = CaeConfig::new(103, 9);
        let p = build_cae(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.weight(ENC_DENSE_W).shape(), &[25, 2784]);
        assert_eq!(p.weight(DEC_DENSE_W).shape(), &[2784, 25]);
        assert_eq!(p.weight(ENC_CONV1_W).shape(), p.weight(DEC_CONV1_W).shape());
        assert_eq!(p.weight(ENC_CONV2_W).shape(), p.weight(DEC_CONV2_W).shape());
        assert!(p.centers().is_none());
        let limit = (6.0f64 / 81.0).sqrt();
        assert!(p.weight(ENC_CONV1_W).data().iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = CaeConfig::new(16, 3);
        assert!(matches!(
            build_cae(&cfg, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut cfg = CaeConfig::new(8, 3);
        cfg.kernel_depth = 3;
        cfg.kernels_per_layer = 4;
        let mut p = build_cae(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let bytes = p.to_checkpoint_bytes();
        assert_eq!(CaeParams::from_checkpoint_bytes(&bytes).unwrap(), p);
        p.set_centers(Tensor::filled(&[3, 25], 0.5)).unwrap();
        let bytes = p.to_checkpoint_bytes();
        assert_eq!(CaeParams::from_checkpoint_bytes(&bytes).unwrap(), p);
        assert!(CaeParams::from_checkpoint_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(p.set_centers(Tensor::zeros(&[2, 25])).is_err());
    }
}
