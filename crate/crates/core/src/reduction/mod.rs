//! Feature reductions applied before clustering: PCA and band-window averaging.

mod pca;
mod smsi;

pub use pca::{pca_fit, pca_reduce_cube, pca_transform, PcaModel};
pub use smsi::{smsi_reduce, smsi_windows};
