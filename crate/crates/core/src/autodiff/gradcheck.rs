use super::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Compares the tape gradient of a scalar function with central differences.
///
/// Returns `max_i |analytic_i − numeric_i| / max(1, |analytic_i|)` over all
/// coordinates of `params`.
pub fn grad_check<'a, F>(f: F, params: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<'a>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..params.len()).collect();
    grad_check_at(f, params, eps, &coords)
}

/// [`grad_check`] restricted to the listed flat coordinates.
///
/// `f` may borrow anything that outlives the tapes it is handed.
pub fn grad_check_at<'a, F>(f: F, params: &Tensor, eps: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Tape<'a>, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("finite-difference step {eps} must be positive")));
    }
    let analytic = {
        let mut tape = Tape::new();
        let var = tape.leaf_owned(params.clone());
        let out = f(&mut tape, var)?;
        if tape.value(out).len() != 1 {
            return Err(Error::Contract(format!(
                "gradient check needs a scalar function, got shape {:?}",
                tape.value(out).shape()
            )));
        }
        let grads = tape.backward(out)?;
        grads
            .get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(params.shape()))
    };

    let eval = |p: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let var = tape.leaf_owned(p.clone());
        let out = f(&mut tape, var)?;
        tape.value(out).item()
    };

    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for &i in coords {
        if i >= params.len() {
            return Err(Error::Parameter(format!("coordinate {i} out of range")));
        }
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
