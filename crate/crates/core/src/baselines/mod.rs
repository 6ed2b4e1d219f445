//! Classical clusterers: k-means and full-covariance Gaussian mixtures.

mod gmm;
mod kmeans;

pub use gmm::{gmm_em, GmmFit, GmmModel, GmmOptions};
pub use kmeans::{kmeans, KmeansFit, KmeansModel, KmeansOptions};
