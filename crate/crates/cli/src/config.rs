use std::fs;
use std::path::Path;

use hsiseg::cae::CaeConfig;
use hsiseg::trainer::TrainConfig;
use hsiseg::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Use all bands.
    None,
    /// Principal components.
    Pca,
    /// Band-window averaging.
    Smsi,
    /// The cube was reduced by an outside tool; use it as is.
    External,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cae3d,
    Kmeans,
    Gmm,
}

/// Everything that determines a run. Missing fields take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub patch_spatial: usize,
    pub embedding_dim: usize,
    pub clusters: usize,
    pub alpha: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub stage2_epochs: usize,
    pub epsilon: f64,
    pub max_stage1_epochs: usize,
    pub kernels_per_layer: usize,
    pub kernel_depth: usize,
    pub reduction: Reduction,
    /// Band count after PCA or band-window reduction.
    pub reduced_bands: usize,
    pub method: Method,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            seed: 0,
            patch_spatial: 5,
            embedding_dim: 25,
            clusters: 2,
            alpha: train.alpha,
            lr: train.lr,
            batch_size: train.batch_size,
            stage2_epochs: train.stage2_epochs,
            epsilon: train.epsilon,
            max_stage1_epochs: train.max_stage1_epochs,
            kernels_per_layer: 32,
            kernel_depth: 9,
            reduction: Reduction::None,
            reduced_bands: 25,
            method: Method::Cae3d,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.clusters < 2 {
            return Err(Error::Config(format!("need at least 2 clusters, got {}", self.clusters)));
        }
        let positive = [
            ("patch_spatial", self.patch_spatial),
            ("embedding_dim", self.embedding_dim),
            ("batch_size", self.batch_size),
            ("max_stage1_epochs", self.max_stage1_epochs),
            ("kernels_per_layer", self.kernels_per_layer),
            ("kernel_depth", self.kernel_depth),
            ("reduced_bands", self.reduced_bands),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.stage2_epochs > 25 {
            return Err(Error::Config(format!("stage2_epochs {} exceeds 25", self.stage2_epochs)));
        }
        if !(self.lr > 0.0) || !(self.epsilon >= 0.0) {
            return Err(Error::Config("lr must be positive and epsilon non-negative".into()));
        }
        Ok(())
    }

    /// Model shape for a cube with `bands` bands after preprocessing.
    pub fn model(&self, bands: usize) -> CaeConfig {
        let mut cfg = CaeConfig::new(bands, self.clusters);
        cfg.patch_spatial = self.patch_spatial;
        cfg.embedding_dim = self.embedding_dim;
        cfg.kernels_per_layer = self.kernels_per_layer;
        cfg.kernel_depth = self.kernel_depth;
        cfg
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            epsilon: self.epsilon,
            max_stage1_epochs: self.max_stage1_epochs,
            stage2_epochs: self.stage2_epochs,
            alpha: self.alpha,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), cfg);
        let partial: RunConfig = serde_json::from_str(r#"{"clusters": 4, "reduction": "smsi"}"#).unwrap();
        assert_eq!(partial.clusters, 4);
        assert_eq!(partial.reduction, Reduction::Smsi);
        assert_eq!(partial.lr, 1e-4);
        assert!(serde_json::from_str::<RunConfig>(r#"{"clusterz": 4}"#).is_err());
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        for bad in [
            RunConfig { alpha: 0.0, ..Default::default() },
            RunConfig { clusters: 1, ..Default::default() },
            RunConfig { batch_size: 0, ..Default::default() },
            RunConfig { stage2_epochs: 26, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
