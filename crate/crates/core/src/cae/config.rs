use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Architecture of the 3D convolutional autoencoder and its clustering layer.
///
/// Both encoder convolutions are valid and unit-stride with
/// `kernel_spatial × kernel_spatial × kernel_depth` kernels, so a
/// `patch_spatial` patch collapses to a single spatial position when
/// `2·(kernel_spatial − 1) + 1 == patch_spatial`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaeConfig {
    pub patch_spatial: usize,
    pub bands: usize,
    pub kernels_per_layer: usize,
    pub kernel_spatial: usize,
    pub kernel_depth: usize,
    pub embedding_dim: usize,
    pub dropout_p: f64,
    pub clusters: usize,
}

impl CaeConfig {
    /// Default geometry: 5×5 patches, 32 kernels of 3×3×9, 25 latent features, dropout 0.5.
    pub fn new(bands: usize, clusters: usize) -> Self {
        Self {
            patch_spatial: 5,
            bands,
            kernels_per_layer: 32,
            kernel_spatial: 3,
            kernel_depth: 9,
            embedding_dim: 25,
            dropout_p: 0.5,
            clusters,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.kernel_spatial == 0 || 2 * (self.kernel_spatial - 1) + 1 != self.patch_spatial {
            return bad(format!(
                "two {0}x{0} valid convolutions do not reduce a {1}x{1} patch to one pixel",
                self.kernel_spatial, self.patch_spatial
            ));
        }
        if self.kernel_depth == 0 || self.bands < 2 * (self.kernel_depth - 1) + 1 {
            return bad(format!(
                "{} bands leave no spectral extent after two depth-{} convolutions",
                self.bands, self.kernel_depth
            ));
        }
        if self.kernels_per_layer == 0 || self.embedding_dim == 0 {
            return bad("kernel count and embedding size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout probability {} outside [0, 1)", self.dropout_p));
        }
        if self.clusters < 2 {
            return bad(format!("clustering needs at least 2 clusters, got {}", self.clusters));
        }
        Ok(())
    }

    /// Spectral extent after the first encoder convolution.
    pub fn depth_after_conv1(&self) -> usize {
        self.bands - self.kernel_depth + 1
    }

    /// Spectral extent after the second encoder convolution.
    pub fn depth_after_conv2(&self) -> usize {
        self.bands - 2 * (self.kernel_depth - 1)
    }

    /// Length of the flattened central-pixel feature vector fed to the embedding layer.
    pub fn flat_len(&self) -> usize {
        self.kernels_per_layer * self.depth_after_conv2()
    }

    pub fn patch_shape(&self) -> [usize; 3] {
        [self.patch_spatial, self.patch_spatial, self.bands]
    }
}
