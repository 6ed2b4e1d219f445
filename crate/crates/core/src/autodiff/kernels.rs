//! Forward and adjoint kernels for the primitives the autoencoder needs.
//!
//! Convolutions use channel-first layouts: inputs are `[C, H, W, D]` and
//! kernels are `[K, C, kh, kw, kd]`. Rank-3 inputs and rank-4 kernels are
//! accepted as the single-channel case.

use rand::Rng;

use super::Tensor;
use crate::{Error, Result};

/// Whether stochastic layers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Extents of a valid, unit-stride 3D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub kernels: usize,
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub kh: usize,
    pub kw: usize,
    pub kd: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.h - self.kh + 1
    }

    pub fn out_w(&self) -> usize {
        self.w - self.kw + 1
    }

    pub fn out_d(&self) -> usize {
        self.d - self.kd + 1
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.channels, self.h, self.w, self.d]
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.kernels, self.out_h(), self.out_w(), self.out_d()]
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.h * self.w * self.d
    }

    pub fn output_len(&self) -> usize {
        self.kernels * self.out_h() * self.out_w() * self.out_d()
    }

    fn input_index(&self, c: usize, i: usize, j: usize, l: usize) -> usize {
        ((c * self.h + i) * self.w + j) * self.d + l
    }

    /// Geometry of `conv3d_valid(input, kernels)`.
    pub fn forward(input: &[usize], kernels: &[usize]) -> Result<Self> {
        let (c, h, w, d) = match *input {
            [h, w, d] => (1, h, w, d),
            [c, h, w, d] => (c, h, w, d),
            _ => return Err(Error::Shape(format!("conv input must be rank 3 or 4, got {input:?}"))),
        };
        let (k, kc, kh, kw, kd) = kernel_dims(kernels)?;
        if kc != c {
            return Err(Error::Shape(format!(
                "kernels expect {kc} input channels, input has {c}"
            )));
        }
        if kh == 0 || kw == 0 || kd == 0 || kh > h || kw > w || kd > d {
            return Err(Error::Shape(format!(
                "kernel {kh}x{kw}x{kd} does not fit input {h}x{w}x{d}"
            )));
        }
        Ok(Self { channels: c, kernels: k, h, w, d, kh, kw, kd })
    }

    /// Geometry of the convolution whose adjoint is `conv3d_transpose(input, kernels)`.
    pub fn transpose(input: &[usize], kernels: &[usize]) -> Result<Self> {
        let (k, c, kh, kw, kd) = kernel_dims(kernels)?;
        let [ik, ih, iw, id] = *input else {
            return Err(Error::Shape(format!(
                "transposed conv input must be rank 4, got {input:?}"
            )));
        };
        if ik != k {
            return Err(Error::Shape(format!(
                "transposed conv input has {ik} channels, kernels have {k}"
            )));
        }
        if kh == 0 || kw == 0 || kd == 0 || ih == 0 || iw == 0 || id == 0 {
            return Err(Error::Shape("zero extent in transposed convolution".into()));
        }
        Ok(Self {
            channels: c,
            kernels: k,
            h: ih + kh - 1,
            w: iw + kw - 1,
            d: id + kd - 1,
            kh,
            kw,
            kd,
        })
    }
}

fn kernel_dims(kernels: &[usize]) -> Result<(usize, usize, usize, usize, usize)> {
    match *kernels {
        [k, kh, kw, kd] => Ok((k, 1, kh, kw, kd)),
        [k, c, kh, kw, kd] => Ok((k, c, kh, kw, kd)),
        _ => Err(Error::Shape(format!("kernels must be rank 4 or 5, got {kernels:?}"))),
    }
}

/// `c = a · b + beta · c` for strided row-major views: `a` is `m × k`, `b` is `k × n`, `c` is `m × n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access inside its slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl ConvGeom {
    /// Rows per kernel in the unrolled input: `channels · kh · kw · kd`.
    fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw * self.kd
    }

    fn positions(&self) -> usize {
        self.out_h() * self.out_w() * self.out_d()
    }

    fn unrolled_rows(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let (kh, kw, kd) = (self.kh, self.kw, self.kd);
        (0..self.channels).flat_map(move |c| {
            (0..kh).flat_map(move |a| (0..kw).flat_map(move |b| (0..kd).map(move |m| (c, a, b, m))))
        })
    }
}

/// Unrolls `x` into a `patch_len × positions` matrix whose columns are the
/// receptive fields of the output positions.
fn im2col(g: &ConvGeom, x: &[f64]) -> Vec<f64> {
    let od = g.out_d();
    let mut cols = Vec::with_capacity(g.patch_len() * g.positions());
    for (c, a, b, m) in g.unrolled_rows() {
        for i in 0..g.out_h() {
            for j in 0..g.out_w() {
                let xs = g.input_index(c, i + a, j + b, m);
                cols.extend_from_slice(&x[xs..xs + od]);
            }
        }
    }
    cols
}

/// Scatter-adds an unrolled matrix back onto the input layout.
fn col2im_add(g: &ConvGeom, cols: &[f64], gx: &mut [f64]) {
    let od = g.out_d();
    let mut rows = cols.chunks(od);
    for (c, a, b, m) in g.unrolled_rows() {
        for i in 0..g.out_h() {
            for j in 0..g.out_w() {
                let xs = g.input_index(c, i + a, j + b, m);
                let src = rows.next().expect("unrolled extent");
                for (d, s) in gx[xs..xs + od].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }
}

/// `out += conv(x, w)` without bias.
///
/// Kernels `[K, C, kh, kw, kd]` are a `K × patch_len` matrix and the output
/// `[K, oh, ow, od]` a `K × positions` matrix, so this is one product.
pub(crate) fn conv_forward(g: &ConvGeom, x: &[f64], w: &[f64], out: &mut [f64]) {
    let (pl, np) = (g.patch_len(), g.positions());
    let cols = im2col(g, x);
    gemm((g.kernels, pl, np), w, (pl, 1), &cols, (np, 1), 1.0, out);
}

/// `gx += convᵀ(gout, w)`: the adjoint of [`conv_forward`] with respect to its input.
pub(crate) fn conv_input_grad(g: &ConvGeom, gout: &[f64], w: &[f64], gx: &mut [f64]) {
    let (pl, np) = (g.patch_len(), g.positions());
    let mut cols = vec![0.0; pl * np];
    gemm((pl, g.kernels, np), w, (1, pl), gout, (np, 1), 0.0, &mut cols);
    col2im_add(g, &cols, gx);
}

/// `gw += ∂⟨gout, conv(x, w)⟩/∂w`.
pub(crate) fn conv_kernel_grad(g: &ConvGeom, x: &[f64], gout: &[f64], gw: &mut [f64]) {
    let (pl, np) = (g.patch_len(), g.positions());
    let cols = im2col(g, x);
    gemm((g.kernels, np, pl), gout, (np, 1), &cols, (1, np), 1.0, gw);
}

/// Adds `bias[ch]` to every element of channel `ch` of a channel-first buffer.
pub(crate) fn add_channel_bias(out: &mut [f64], bias: &[f64]) {
    let per = out.len() / bias.len();
    for (chunk, b) in out.chunks_mut(per).zip(bias) {
        for v in chunk {
            *v += b;
        }
    }
}

pub(crate) fn channel_sums(g: &[f64], channels: usize) -> Vec<f64> {
    let per = g.len() / channels;
    g.chunks(per).map(|c| c.iter().sum()).collect()
}

fn check_bias(bias: &Tensor, n: usize) -> Result<()> {
    if bias.len() != n {
        return Err(Error::Shape(format!("bias has {} entries, expected {n}", bias.len())));
    }
    Ok(())
}

/// Valid (no padding), unit-stride 3D convolution. Output is `[K, h−kh+1, w−kw+1, d−kd+1]`.
pub fn conv3d_valid(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let geom = ConvGeom::forward(input.shape(), kernels.shape())?;
    check_bias(bias, geom.kernels)?;
    let mut out = vec![0.0; geom.output_len()];
    conv_forward(&geom, input.data(), kernels.data(), &mut out);
    add_channel_bias(&mut out, bias.data());
    Tensor::new(geom.output_shape().to_vec(), out)
}

/// Transposed convolution: the linear adjoint of [`conv3d_valid`] for the same
/// kernels, plus a per-output-channel bias. Each spatial extent grows by
/// `kernel − 1`. With rank-4 (single channel) kernels the output is rank 3.
pub fn conv3d_transpose(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let geom = ConvGeom::transpose(input.shape(), kernels.shape())?;
    check_bias(bias, geom.channels)?;
    let mut out = vec![0.0; geom.input_len()];
    conv_input_grad(&geom, input.data(), kernels.data(), &mut out);
    add_channel_bias(&mut out, bias.data());
    let shape = if kernels.rank() == 4 {
        vec![geom.h, geom.w, geom.d]
    } else {
        geom.input_shape().to_vec()
    };
    Tensor::new(shape, out)
}

pub(crate) fn dense_dims(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let [n, m] = *weights.shape() else {
        return Err(Error::Shape(format!("dense weights must be rank 2, got {:?}", weights.shape())));
    };
    if input.len() != m {
        return Err(Error::Shape(format!("dense layer expects {m} inputs, got {}", input.len())));
    }
    check_bias(bias, n)?;
    Ok((n, m))
}

/// Fully connected layer `weights · input + bias`.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, m) = dense_dims(input, weights, bias)?;
    let x = input.data();
    let out = weights
        .data()
        .chunks(m)
        .zip(bias.data())
        .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect::<Vec<_>>();
    debug_assert_eq!(out.len(), n);
    Ok(Tensor::vector(out))
}

/// Inverted-dropout mask: zero with probability `p`, `1/(1−p)` otherwise.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Parameter(format!("dropout probability {p} outside [0, 1)")));
    }
    let keep = 1.0 / (1.0 - p);
    Ok((0..len)
        .map(|_| if p > 0.0 && rng.random::<f64>() < p { 0.0 } else { keep })
        .collect())
}

/// Inverted dropout. Identity in [`Mode::Infer`].
pub fn dropout<R: Rng + ?Sized>(input: &Tensor, p: f64, mode: Mode, rng: &mut R) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Parameter(format!("dropout probability {p} outside [0, 1)")));
    }
    match mode {
        Mode::Infer => Ok(input.clone()),
        Mode::Train => {
            let mask = dropout_mask(input.len(), p, rng)?;
            let data = input.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
            Tensor::new(input.shape().to_vec(), data)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    // Six nested loops straight from the definition.
    fn conv_reference(x: &Tensor, w: &Tensor, bias: &Tensor) -> Vec<f64> {
        let [h, wd, d] = *x.shape() else { panic!() };
        let [k, kh, kw, kd] = *w.shape() else { panic!() };
        let (oh, ow, od) = (h - kh + 1, wd - kw + 1, d - kd + 1);
        let mut out = Vec::new();
        for kk in 0..k {
            for i in 0..oh {
                for j in 0..ow {
                    for l in 0..od {
                        let mut s = bias.data()[kk];
                        for a in 0..kh {
                            for b in 0..kw {
                                for m in 0..kd {
                                    s += x.data()[((i + a) * wd + j + b) * d + l + m]
                                        * w.data()[((kk * kh + a) * kw + b) * kd + m];
                                }
                            }
                        }
                        out.push(s);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[3, 4, 5], &mut rng);
        let w = Tensor::filled(&[1, 1, 1, 1], 1.0);
        let out = conv3d_valid(&x, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out.shape(), &[1, 3, 4, 5]);
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn ones_kernel_on_constant_input() {
        let x = Tensor::filled(&[4, 4, 4], 1.5);
        let w = Tensor::filled(&[1, 2, 2, 2], 1.0);
        let out = conv3d_valid(&x, &w, &Tensor::vector(vec![0.25])).unwrap();
        assert_eq!(out.shape(), &[1, 3, 3, 3]);
        assert!(out.data().iter().all(|&v| v == 8.0 * 1.5 + 0.25));
    }

    #[test]
    fn matches_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[4, 4, 5], &mut rng);
        let w = random(&[2, 3, 3, 2], &mut rng);
        let b = random(&[2], &mut rng);
        let out = conv3d_valid(&x, &w, &b).unwrap();
        assert_eq!(out.shape(), &[2, 2, 2, 4]);
        for (got, want) in out.data().iter().zip(conv_reference(&x, &w, &b)) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_larger_than_input() {
        let x = Tensor::zeros(&[2, 5, 5]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(matches!(conv3d_valid(&x, &w, &Tensor::zeros(&[1])), Err(Error::Shape(_))));
    }

    #[test]
    fn transpose_shape_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = random(&[1, 2, 3, 4], &mut rng);
        let w = random(&[1, 2, 2, 3], &mut rng);
        let out = conv3d_transpose(&y, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out.shape(), &[3, 4, 6]);

        let w = Tensor::filled(&[1, 1, 1, 1], 2.0);
        let out = conv3d_transpose(&y, &w, &Tensor::vector(vec![0.5])).unwrap();
        for (o, v) in out.data().iter().zip(y.data()) {
            assert_eq!(*o, 2.0 * v + 0.5);
        }
    }

    #[test]
    fn transpose_channel_mismatch() {
        let y = Tensor::zeros(&[2, 1, 1, 3]);
        let w = Tensor::zeros(&[3, 1, 2, 2, 2]);
        assert!(conv3d_transpose(&y, &w, &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn dense_cases() {
        let x = Tensor::vector(vec![1.0, -2.0, 3.0]);
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[3])).unwrap().data(), x.data());

        let b = Tensor::vector(vec![4.0, 5.0]);
        assert_eq!(dense(&x, &Tensor::zeros(&[2, 3]), &b).unwrap().data(), b.data());

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = random(&[3, 4], &mut rng);
        let x = random(&[4], &mut rng);
        let b = random(&[3], &mut rng);
        let out = dense(&x, &w, &b).unwrap();
        for r in 0..3 {
            let mut s = b.data()[r];
            for c in 0..4 {
                s += w.data()[r * 4 + c] * x.data()[c];
            }
            assert!((out.data()[r] - s).abs() < 1e-14);
        }
        assert!(dense(&x, &Tensor::zeros(&[3, 5]), &b).is_err());
    }

    #[test]
    fn dropout_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[100], &mut rng);
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(dropout(&x, 0.9, Mode::Infer, &mut rng).unwrap(), x);
        assert!(matches!(dropout(&x, 1.0, Mode::Train, &mut rng), Err(Error::Parameter(_))));

        let ones = Tensor::filled(&[1_000_000], 1.0);
        let out = dropout(&ones, 0.5, Mode::Train, &mut rng).unwrap();
        let mean = out.sum() / out.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }
}
