use crate::autodiff::Tensor;
use crate::{Error, Result};

/// Adam moments for a list of parameter tensors.
///
/// Slots are created lazily, so tensors appended later (cluster centers)
/// start with fresh moments and their own bias-correction count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    /// Number of updates applied.
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    slot_steps: Vec<u64>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
            slot_steps: Vec::new(),
        }
    }

    pub fn first_moment(&self, slot: usize) -> Option<&Tensor> {
        self.m.get(slot)
    }

    pub fn second_moment(&self, slot: usize) -> Option<&Tensor> {
        self.v.get(slot)
    }
}

/// One bias-corrected Adam update of `params` with `grads`.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Contract(format!("{} parameters but {} gradients", params.len(), grads.len())));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::Contract(format!(
                "parameter {i} has shape {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if let Some(m) = state.m.get(i) {
            if m.shape() != p.shape() {
                return Err(Error::Contract(format!("optimizer slot {i} has shape {:?}", m.shape())));
            }
        }
    }
    while state.m.len() < params.len() {
        let shape = params[state.m.len()].shape().to_vec();
        state.m.push(Tensor::zeros(&shape));
        state.v.push(Tensor::zeros(&shape));
        state.slot_steps.push(0);
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        state.slot_steps[i] += 1;
        let t = state.slot_steps[i] as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((pv, gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= state.lr * m_hat / (v_hat.sqrt() + state.eps_hat);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let mut s = AdamState::new(1e-4);
        adam_step(&mut [&mut p], &[Tensor::zeros(&[2])], &mut s).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_magnitude() {
        for g in [1e-3, 0.5, -7.0, 1e4] {
            let mut p = Tensor::vector(vec![0.0]);
            let mut s = AdamState::new(1e-4);
            adam_step(&mut [&mut p], &[Tensor::vector(vec![g])], &mut s).unwrap();
            // m̂ = g, v̂ = g² → update lr·g/(|g| + ε̂).
            let want = -1e-4 * g / (g.abs() + 1e-8);
            assert!((p.data()[0] - want).abs() < 1e-18, "{g}");
        }
    }

    #[test]
    fn identical_grads_identical_updates() {
        let mut a = Tensor::vector(vec![0.3, 0.3]);
        let mut b = Tensor::vector(vec![0.3]);
        let mut s = AdamState::new(1e-3);
        let ga = Tensor::vector(vec![0.2, 0.2]);
        let gb = Tensor::vector(vec![0.2]);
        for _ in 0..3 {
            adam_step(&mut [&mut a, &mut b], &[ga.clone(), gb.clone()], &mut s).unwrap();
        }
        assert_eq!(a.data()[0], a.data()[1]);
        assert_eq!(a.data()[0], b.data()[0]);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Tensor::vector(vec![0.0; 3]);
        let mut s = AdamState::new(1e-4);
        assert!(matches!(
            adam_step(&mut [&mut p], &[Tensor::zeros(&[2])], &mut s),
            Err(Error::Contract(_))
        ));
    }
}
