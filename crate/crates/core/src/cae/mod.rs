//! 3D convolutional autoencoder with a clustering layer.

mod clustering;
mod config;
mod model;
pub mod params;

pub use clustering::{
    clustering_loss, init_centers, reconstruction_loss, soft_assign, target_distribution, total_loss,
    AssignmentMatrix,
};
pub(crate) use clustering::{argmax_rows, kl_row, student_t_row};
pub use config::CaeConfig;
pub use model::{decode, decode_on_tape, encode, encode_on_tape, patch_objective, ClusterTerm, ParamVars, PatchObjective};
pub use params::{build_cae, CaeParams, PARAM_NAMES};
