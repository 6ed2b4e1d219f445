//! Unsupervised hyperspectral image segmentation.
//!
//! A 3D convolutional autoencoder learns a 25-dimensional embedding of every
//! 5×5×B pixel neighbourhood, and a clustering layer with trainable centers
//! refines that embedding with a KL-divergence clustering loss. The crate also
//! carries the classical pieces used for comparison: PCA and band-window
//! reductions, k-means, full-covariance Gaussian mixtures, and clustering
//! metrics (NMI, adjusted Rand, OA/AA/kappa).

pub mod autodiff;
pub mod baselines;
pub mod cae;
pub mod error;
pub mod hsi;
pub mod metrics;
pub mod reduction;
pub mod synth;
pub mod trainer;

pub use error::{Error, ErrorCategory, Result};
