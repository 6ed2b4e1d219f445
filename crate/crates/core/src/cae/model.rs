//! Forward graph of the autoencoder on a [`Tape`].

use rand::Rng;

use super::params::*;
use super::{CaeConfig, CaeParams};
use crate::autodiff::{Mode, Tape, Tensor, Var};
use crate::{Error, Result};

/// Tape handles for every parameter tensor, in [`PARAM_NAMES`] order.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub weights: Vec<Var>,
    pub centers: Option<Var>,
}

impl CaeParams {
    /// Registers every tensor as a borrowed leaf on `tape`.
    pub fn register<'a>(&'a self, tape: &mut Tape<'a>) -> ParamVars {
        let weights = self.weights().iter().map(|t| tape.leaf(t)).collect();
        let centers = self.centers().map(|c| tape.leaf(c));
        ParamVars { weights, centers }
    }
}

fn check_patch(config: &CaeConfig, patch: &Tensor) -> Result<()> {
    let want = config.patch_shape();
    let ok = patch.shape() == want || patch.shape() == [1, want[0], want[1], want[2]];
    if !ok {
        return Err(Error::Shape(format!("patch {:?} does not match {want:?}", patch.shape())));
    }
    Ok(())
}

/// Encoder: conv → tanh → dropout → conv → tanh → flatten → dense (latent).
pub fn encode_on_tape<'a, R: Rng + ?Sized>(
    tape: &mut Tape<'a>,
    vars: &ParamVars,
    config: &CaeConfig,
    patch: Var,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    check_patch(config, tape.value(patch))?;
    let w = &vars.weights;
    let s = config.patch_spatial;
    let x = tape.reshape(patch, &[1, s, s, config.bands])?;
    let h = tape.conv3d(x, w[ENC_CONV1_W], w[ENC_CONV1_B])?;
    let h = tape.tanh(h);
    let h = tape.dropout(h, config.dropout_p, mode, rng)?;
    let h = tape.conv3d(h, w[ENC_CONV2_W], w[ENC_CONV2_B])?;
    let h = tape.tanh(h);
    let flat = tape.reshape(h, &[config.flat_len()])?;
    tape.dense(flat, w[ENC_DENSE_W], w[ENC_DENSE_B])
}

/// Decoder: dense → tanh → reshape → transposed conv → tanh → transposed conv.
pub fn decode_on_tape(tape: &mut Tape<'_>, vars: &ParamVars, config: &CaeConfig, latent: Var) -> Result<Var> {
    if tape.value(latent).len() != config.embedding_dim {
        return Err(Error::Shape(format!(
            "latent of length {} but embedding size is {}",
            tape.value(latent).len(),
            config.embedding_dim
        )));
    }
    let w = &vars.weights;
    let g = tape.dense(latent, w[DEC_DENSE_W], w[DEC_DENSE_B])?;
    let g = tape.tanh(g);
    let g = tape.reshape(g, &[config.kernels_per_layer, 1, 1, config.depth_after_conv2()])?;
    let u = tape.conv3d_transpose(g, w[DEC_CONV2_W], w[DEC_CONV2_B])?;
    let u = tape.tanh(u);
    let out = tape.conv3d_transpose(u, w[DEC_CONV1_W], w[DEC_CONV1_B])?;
    tape.reshape(out, &config.patch_shape())
}

/// Latent vector of one `5×5×B` patch.
pub fn encode<R: Rng + ?Sized>(params: &CaeParams, patch: &Tensor, mode: Mode, rng: &mut R) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let x = tape.constant_ref(patch);
    let z = encode_on_tape(&mut tape, &vars, params.config(), x, mode, rng)?;
    Ok(tape.value(z).clone())
}

/// Reconstructed patch for a latent vector.
pub fn decode(params: &CaeParams, latent: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let z = tape.constant_ref(latent);
    let out = decode_on_tape(&mut tape, &vars, params.config(), z)?;
    Ok(tape.value(out).clone())
}

/// Clustering term of one patch's objective.
#[derive(Clone, Copy, Debug)]
pub struct ClusterTerm<'t> {
    /// Target row `t_i`, held constant.
    pub target: &'t [f64],
    pub alpha: f64,
}

/// Scalar pieces of one patch's objective together with its root on the tape.
#[derive(Clone, Copy, Debug)]
pub struct PatchObjective {
    pub root: Var,
    pub latent: Var,
    /// `‖x − x′‖²` for this patch.
    pub squared_error: f64,
    /// `KL(t_i ‖ q_i)`, zero when no clustering term was requested.
    pub kl: f64,
}

/// Builds `recon_weight · ‖x − x′‖² + alpha · KL(t_i ‖ q_i)` for one patch.
///
/// With `recon_weight = 1/p` and summed over a batch of `p` patches this is
/// `L_r + alpha · L_c`.
#[allow(clippy::too_many_arguments)]
pub fn patch_objective<'a, R: Rng + ?Sized>(
    tape: &mut Tape<'a>,
    vars: &ParamVars,
    config: &CaeConfig,
    patch: &'a Tensor,
    recon_weight: f64,
    cluster: Option<ClusterTerm<'_>>,
    mode: Mode,
    rng: &mut R,
) -> Result<PatchObjective> {
    let x = tape.constant_ref(patch);
    let z = encode_on_tape(tape, vars, config, x, mode, rng)?;
    let out = decode_on_tape(tape, vars, config, z)?;
    let se = tape.squared_error(out, patch)?;
    let squared_error = tape.value(se).item()?;
    let mut root = tape.scale(se, recon_weight);
    let mut kl = 0.0;
    if let Some(term) = cluster {
        let centers = vars
            .centers
            .ok_or_else(|| Error::State("cluster centers are not initialized".into()))?;
        let q = tape.soft_assign(z, centers)?;
        let k = tape.kl_divergence(q, term.target)?;
        kl = tape.value(k).item()?;
        let scaled = tape.scale(k, term.alpha);
        root = tape.add(root, scaled)?;
    }
    Ok(PatchObjective { root, latent: z, squared_error, kl })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cae::build_cae;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> (CaeParams, ChaCha8Rng) {
        let mut cfg = CaeConfig::new(8, 3);
        cfg.kernel_depth = 3;
        cfg.kernels_per_layer = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        (build_cae(&cfg, &mut rng).unwrap(), rng)
    }

    fn random_patch(rng: &mut ChaCha8Rng, bands: usize) -> Tensor {
        Tensor::new(vec![5, 5, bands], (0..25 * bands).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn latent_length_and_determinism() {
        let (p, mut rng) = small();
        let x = random_patch(&mut rng, 8);
        let a = encode(&p, &x, Mode::Infer, &mut rng).unwrap();
        let b = encode(&p, &x, Mode::Infer, &mut rng).unwrap();
        assert_eq!(a.len(), 25);
        assert_eq!(a, b);
        let decoded = decode(&p, &a).unwrap();
        assert_eq!(decoded.shape(), x.shape());
    }

    #[test]
    fn zero_embedding_weights_give_bias() {
        let (mut p, mut rng) = small();
        *p.weight_mut(ENC_DENSE_W) = Tensor::zeros(p.weight(ENC_DENSE_W).shape());
        let b: Vec<f64> = (0..25).map(|i| i as f64 * 0.1).collect();
        *p.weight_mut(ENC_DENSE_B) = Tensor::vector(b.clone());
        for _ in 0..3 {
            let x = random_patch(&mut rng, 8);
            assert_eq!(encode(&p, &x, Mode::Train, &mut rng).unwrap().data(), &b[..]);
        }
    }

    #[test]
    fn zero_latent_decodes_to_zero() {
        let (p, _) = small();
        let out = decode(&p, &Tensor::zeros(&[25])).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let (p, mut rng) = small();
        assert!(encode(&p, &Tensor::zeros(&[5, 5, 9]), Mode::Infer, &mut rng).is_err());
        assert!(decode(&p, &Tensor::zeros(&[24])).is_err());
    }

    #[test]
    fn cluster_term_needs_centers() {
        let (p, mut rng) = small();
        let x = random_patch(&mut rng, 8);
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let t = [0.2, 0.3, 0.5];
        let res = patch_objective(
            &mut tape,
            &vars,
            p.config(),
            &x,
            1.0,
            Some(ClusterTerm { target: &t, alpha: 0.1 }),
            Mode::Infer,
            &mut rng,
        );
        assert!(matches!(res, Err(Error::State(_))));
    }
}
