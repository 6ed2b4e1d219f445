//! Reverse-mode differentiation over a linear tape.
//!
//! Every primitive appends one node holding its forward value and the ids of
//! its inputs. [`Tape::backward`] walks the nodes in reverse order and sums
//! adjoints into each input, so fan-out is handled by accumulation.

use std::borrow::Cow;

use rand::Rng;

use super::kernels::{
    self, channel_sums, conv_forward, conv_input_grad, conv_kernel_grad, ConvGeom, Mode,
};
use super::Tensor;
use crate::{Error, Result};

/// Lower clamp applied to assignment probabilities inside logarithms.
pub const Q_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Conv { input: Var, kernels: Var, bias: Var, geom: ConvGeom },
    ConvTranspose { input: Var, kernels: Var, bias: Var, geom: ConvGeom },
    Dense { input: Var, weights: Var, bias: Var },
    Tanh { input: Var },
    Dropout { input: Var, mask: Vec<f64> },
    Reshape { input: Var },
    Add { a: Var, b: Var },
    Scale { input: Var, factor: f64 },
    SquaredError { input: Var, target: Tensor },
    Sum { input: Var },
    SoftAssign { latent: Var, centers: Var },
    KlDivergence { q: Var, target: Vec<f64> },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Adjoints produced by [`Tape::backward`]; retained for leaves only.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.is_finite() || matches!(op, Op::Leaf | Op::Constant));
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    /// Differentiable input borrowed for the tape's lifetime.
    pub fn leaf(&mut self, value: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    pub fn leaf_owned(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// Input that receives no adjoint.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Constant, false)
    }

    pub fn constant_ref(&mut self, value: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Constant, false)
    }

    pub fn conv3d(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let out = kernels::conv3d_valid(self.value(input), self.value(kernels), self.value(bias))?;
        let geom = ConvGeom::forward(self.value(input).shape(), self.value(kernels).shape())?;
        let needs = self.needs(input) || self.needs(kernels) || self.needs(bias);
        Ok(self.push(Cow::Owned(out), Op::Conv { input, kernels, bias, geom }, needs))
    }

    pub fn conv3d_transpose(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let out = kernels::conv3d_transpose(self.value(input), self.value(kernels), self.value(bias))?;
        let geom = ConvGeom::transpose(self.value(input).shape(), self.value(kernels).shape())?;
        let needs = self.needs(input) || self.needs(kernels) || self.needs(bias);
        Ok(self.push(Cow::Owned(out), Op::ConvTranspose { input, kernels, bias, geom }, needs))
    }

    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let out = kernels::dense(self.value(input), self.value(weights), self.value(bias))?;
        let needs = self.needs(input) || self.needs(weights) || self.needs(bias);
        Ok(self.push(Cow::Owned(out), Op::Dense { input, weights, bias }, needs))
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        let out = self.value(input).map(f64::tanh);
        let needs = self.needs(input);
        self.push(Cow::Owned(out), Op::Tanh { input }, needs)
    }

    /// Inverted dropout; the sampled mask is frozen on the tape for the backward pass.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout probability {p} outside [0, 1)")));
        }
        if mode == Mode::Infer || p == 0.0 {
            return Ok(input);
        }
        let mask = kernels::dropout_mask(self.value(input).len(), p, rng)?;
        self.dropout_with_mask(input, mask)
    }

    pub fn dropout_with_mask(&mut self, input: Var, mask: Vec<f64>) -> Result<Var> {
        let x = self.value(input);
        if mask.len() != x.len() {
            return Err(Error::Shape(format!("dropout mask length {} != {}", mask.len(), x.len())));
        }
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let needs = self.needs(input);
        Ok(self.push(Cow::Owned(out), Op::Dropout { input, mask }, needs))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(input).clone().reshape(shape)?;
        let needs = self.needs(input);
        Ok(self.push(Cow::Owned(out), Op::Reshape { input }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        if out.shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "add of {:?} and {:?}",
                out.shape(),
                self.value(b).shape()
            )));
        }
        out.add_assign(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Cow::Owned(out), Op::Add { a, b }, needs))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let out = self.value(input).map(|v| v * factor);
        let needs = self.needs(input);
        self.push(Cow::Owned(out), Op::Scale { input, factor }, needs)
    }

    /// `Σ (input − target)²` as a scalar.
    pub fn squared_error(&mut self, input: Var, target: &Tensor) -> Result<Var> {
        let x = self.value(input);
        if x.len() != target.len() {
            return Err(Error::Shape(format!(
                "squared error of {:?} against {:?}",
                x.shape(),
                target.shape()
            )));
        }
        let s = x.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let needs = self.needs(input);
        Ok(self.push(
            Cow::Owned(Tensor::scalar(s)),
            Op::SquaredError { input, target: target.clone() },
            needs,
        ))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).sum();
        let needs = self.needs(input);
        self.push(Cow::Owned(Tensor::scalar(s)), Op::Sum { input }, needs)
    }

    /// Student's-t soft assignment of one latent `[n]` against `centers [J, n]`;
    /// output is a probability row `[J]`.
    pub fn soft_assign(&mut self, latent: Var, centers: Var) -> Result<Var> {
        let z = self.value(latent);
        let mu = self.value(centers);
        let [j, n] = *mu.shape() else {
            return Err(Error::Shape(format!("centers must be [J, n], got {:?}", mu.shape())));
        };
        if z.len() != n || j == 0 {
            return Err(Error::Shape(format!("latent of length {} against centers {:?}", z.len(), mu.shape())));
        }
        let q = crate::cae::student_t_row(z.data(), mu.data(), n);
        let needs = self.needs(latent) || self.needs(centers);
        Ok(self.push(Cow::Owned(Tensor::vector(q)), Op::SoftAssign { latent, centers }, needs))
    }

    /// `Σ_j t_j log(t_j / q_j)` with `t` held constant and `q` clamped at [`Q_FLOOR`].
    pub fn kl_divergence(&mut self, q: Var, target: &[f64]) -> Result<Var> {
        let qv = self.value(q);
        if qv.len() != target.len() {
            return Err(Error::Shape(format!("KL of {} against {} entries", target.len(), qv.len())));
        }
        let s = crate::cae::kl_row(target, qv.data());
        let needs = self.needs(q);
        Ok(self.push(
            Cow::Owned(Tensor::scalar(s)),
            Op::KlDivergence { q, target: target.to_vec() },
            needs,
        ))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::new(self.value(root).shape().to_vec(), vec![1.0])?);

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf | Op::Constant) || !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, contribution: Tensor) {
        if !self.needs(var) {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => {
                for (e, c) in existing.data_mut().iter_mut().zip(contribution.data()) {
                    *e += c;
                }
            }
            slot @ None => {
                let shape = self.value(var).shape();
                *slot = Some(contribution.reshape(shape).expect("adjoint shape matches value"));
            }
        }
    }

    fn propagate(&self, node: &Node<'a>, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let shaped = |v: Var, data: Vec<f64>| {
            Tensor::new(self.value(v).shape().to_vec(), data).expect("adjoint shape matches value")
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Conv { input, kernels, bias, geom } => {
                let w = self.value(*kernels).data();
                if self.needs(*input) {
                    let mut gx = vec![0.0; geom.input_len()];
                    conv_input_grad(geom, g.data(), w, &mut gx);
                    self.accumulate(grads, *input, shaped(*input, gx));
                }
                if self.needs(*kernels) {
                    let mut gw = vec![0.0; w.len()];
                    conv_kernel_grad(geom, self.value(*input).data(), g.data(), &mut gw);
                    self.accumulate(grads, *kernels, shaped(*kernels, gw));
                }
                if self.needs(*bias) {
                    let gb = channel_sums(g.data(), geom.kernels);
                    self.accumulate(grads, *bias, shaped(*bias, gb));
                }
            }
            Op::ConvTranspose { input, kernels, bias, geom } => {
                let w = self.value(*kernels).data();
                if self.needs(*input) {
                    let mut gy = vec![0.0; geom.output_len()];
                    conv_forward(geom, g.data(), w, &mut gy);
                    self.accumulate(grads, *input, shaped(*input, gy));
                }
                if self.needs(*kernels) {
                    let mut gw = vec![0.0; w.len()];
                    conv_kernel_grad(geom, g.data(), self.value(*input).data(), &mut gw);
                    self.accumulate(grads, *kernels, shaped(*kernels, gw));
                }
                if self.needs(*bias) {
                    let gb = channel_sums(g.data(), geom.channels);
                    self.accumulate(grads, *bias, shaped(*bias, gb));
                }
            }
            Op::Dense { input, weights, bias } => {
                let x = self.value(*input).data();
                let w = self.value(*weights).data();
                let m = x.len();
                if self.needs(*weights) {
                    let mut gw = vec![0.0; w.len()];
                    for (row, gr) in gw.chunks_mut(m).zip(g.data()) {
                        for (r, xv) in row.iter_mut().zip(x) {
                            *r = gr * xv;
                        }
                    }
                    self.accumulate(grads, *weights, shaped(*weights, gw));
                }
                if self.needs(*input) {
                    let mut gx = vec![0.0; m];
                    for (row, gr) in w.chunks(m).zip(g.data()) {
                        for (o, wv) in gx.iter_mut().zip(row) {
                            *o += gr * wv;
                        }
                    }
                    self.accumulate(grads, *input, shaped(*input, gx));
                }
                if self.needs(*bias) {
                    self.accumulate(grads, *bias, shaped(*bias, g.data().to_vec()));
                }
            }
            Op::Tanh { input } => {
                let gx = node
                    .value
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(y, gv)| gv * (1.0 - y * y))
                    .collect();
                self.accumulate(grads, *input, shaped(*input, gx));
            }
            Op::Dropout { input, mask } => {
                let gx = g.data().iter().zip(mask).map(|(gv, m)| gv * m).collect();
                self.accumulate(grads, *input, shaped(*input, gx));
            }
            Op::Reshape { input } => {
                self.accumulate(grads, *input, shaped(*input, g.data().to_vec()));
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, shaped(*a, g.data().to_vec()));
                self.accumulate(grads, *b, shaped(*b, g.data().to_vec()));
            }
            Op::Scale { input, factor } => {
                let gx = g.data().iter().map(|v| v * factor).collect();
                self.accumulate(grads, *input, shaped(*input, gx));
            }
            Op::SquaredError { input, target } => {
                let g0 = g.data()[0];
                let gx = self
                    .value(*input)
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(x, t)| 2.0 * g0 * (x - t))
                    .collect();
                self.accumulate(grads, *input, shaped(*input, gx));
            }
            Op::Sum { input } => {
                let g0 = g.data()[0];
                let n = self.value(*input).len();
                self.accumulate(grads, *input, shaped(*input, vec![g0; n]));
            }
            Op::SoftAssign { latent, centers } => {
                // q_j = w_j / S with w_j = 1/(1 + d_j), d_j = ‖z − μ_j‖².
                let z = self.value(*latent).data();
                let mu = self.value(*centers).data();
                let q = node.value.data();
                let n = z.len();
                let weights: Vec<f64> = mu
                    .chunks(n)
                    .map(|c| 1.0 / (1.0 + c.iter().zip(z).map(|(a, b)| (b - a) * (b - a)).sum::<f64>()))
                    .collect();
                let total: f64 = weights.iter().sum();
                let mean_g: f64 = g.data().iter().zip(q).map(|(gv, qv)| gv * qv).sum();
                let mut gz = vec![0.0; n];
                let mut gmu = vec![0.0; mu.len()];
                for (j, (c, w)) in mu.chunks(n).zip(&weights).enumerate() {
                    let g_w = (g.data()[j] - mean_g) / total;
                    let g_d = -w * w * g_w;
                    for (t, (zv, cv)) in z.iter().zip(c).enumerate() {
                        let diff = 2.0 * g_d * (zv - cv);
                        gz[t] += diff;
                        gmu[j * n + t] -= diff;
                    }
                }
                self.accumulate(grads, *latent, shaped(*latent, gz));
                self.accumulate(grads, *centers, shaped(*centers, gmu));
            }
            Op::KlDivergence { q, target } => {
                let g0 = g.data()[0];
                let gq = self
                    .value(*q)
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(qv, t)| if *t > 0.0 && *qv > Q_FLOOR { -g0 * t / qv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *q, shaped(*q, gq));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fan_out_sums_adjoints() {
        let x = Tensor::vector(vec![0.3, -0.7, 1.1]);
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let a = tape.tanh(v);
        let b = tape.tanh(v);
        let s = tape.add(a, b).unwrap();
        let root = tape.sum(s);
        let grads = tape.backward(root).unwrap();
        let g = grads.get(v).unwrap();
        for (gv, xv) in g.data().iter().zip(x.data()) {
            let single = 1.0 - xv.tanh().powi(2);
            assert!((gv - 2.0 * single).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let t = tape.tanh(v);
        assert!(matches!(tape.backward(t), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let mut tape = Tape::new();
        let c = tape.constant(x.clone());
        let v = tape.leaf(&x);
        let s = tape.add(c, v).unwrap();
        let root = tape.sum(s);
        let grads = tape.backward(root).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(v).unwrap().data(), &[1.0, 1.0]);
    }
}
