//! Clustering layer: Student's-t soft assignment, the sharpened target
//! distribution, and the losses that combine them with reconstruction.

use crate::autodiff::{Tensor, Q_FLOOR};
use crate::baselines::kmeans;
use crate::{Error, Result};

/// `q_j ∝ (1 + ‖z − μ_j‖²)⁻¹`, normalized over `j`. `centers` is row-major `J × n`.
pub(crate) fn student_t_row(z: &[f64], centers: &[f64], n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = centers
        .chunks(n)
        .map(|c| 1.0 / (1.0 + c.iter().zip(z).map(|(a, b)| (b - a) * (b - a)).sum::<f64>()))
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// KL divergence of one row pair. Rounding can push `t ≈ q` slightly below
/// zero; the result is clamped since both rows are distributions.
pub(crate) fn kl_row(t: &[f64], q: &[f64]) -> f64 {
    let kl: f64 = t
        .iter()
        .zip(q)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, q)| t * (t / q.max(Q_FLOOR)).ln())
        .sum();
    kl.max(0.0)
}

fn matrix_dims(m: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *m.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::Shape(format!("{what} must be a matrix, got {:?}", m.shape()))),
    }
}

/// Soft assignments `q` (`p′ × J`) of latents (`p′ × n`) to centers (`J × n`).
pub fn soft_assign(latents: &Tensor, centers: Option<&Tensor>) -> Result<Tensor> {
    let centers = centers.ok_or_else(|| Error::State("cluster centers are not initialized".into()))?;
    let (p, n) = matrix_dims(latents, "latents")?;
    let (j, cn) = matrix_dims(centers, "centers")?;
    if cn != n || j == 0 {
        return Err(Error::Shape(format!(
            "latents {:?} against centers {:?}",
            latents.shape(),
            centers.shape()
        )));
    }
    let data = latents
        .data()
        .chunks(n)
        .flat_map(|z| student_t_row(z, centers.data(), n))
        .collect();
    Tensor::new(vec![p, j], data)
}

/// Target distribution `t_ij = (q_ij²/f_j) / Σ_j′ (q_ij′²/f_j′)` with `f_j = Σ_i q_ij`.
pub fn target_distribution(q: &Tensor) -> Result<Tensor> {
    let (_, j) = matrix_dims(q, "assignments")?;
    let mut freq = vec![0.0; j];
    for row in q.data().chunks(j) {
        for (f, v) in freq.iter_mut().zip(row) {
            *f += v;
        }
    }
    if let Some(c) = freq.iter().position(|&f| f <= 0.0) {
        return Err(Error::Degenerate(format!("cluster {c} has zero total assignment")));
    }
    let mut out = Vec::with_capacity(q.len());
    for row in q.data().chunks(j) {
        let start = out.len();
        out.extend(row.iter().zip(&freq).map(|(v, f)| v * v / f));
        let norm: f64 = out[start..].iter().sum();
        for v in &mut out[start..] {
            *v /= norm;
        }
    }
    Tensor::new(q.shape().to_vec(), out)
}

/// `KL(T ‖ Q) = Σ_i Σ_j t_ij log(t_ij / q_ij)`, with `0 · log 0 = 0`.
pub fn clustering_loss(t: &Tensor, q: &Tensor) -> Result<f64> {
    let (_, j) = matrix_dims(q, "assignments")?;
    if t.shape() != q.shape() {
        return Err(Error::Shape(format!("target {:?} vs assignments {:?}", t.shape(), q.shape())));
    }
    Ok(t.data().chunks(j).zip(q.data().chunks(j)).map(|(tr, qr)| kl_row(tr, qr)).sum())
}

/// `L = L_r + alpha · L_c`, `alpha ∈ (0, 1)`.
pub fn total_loss(reconstruction: f64, clustering: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("loss weight {alpha} outside (0, 1)")));
    }
    Ok(reconstruction + alpha * clustering)
}

/// `L_r = (1/p) Σ_i ‖x_i − x′_i‖²`.
pub fn reconstruction_loss(inputs: &[Tensor], outputs: &[Tensor]) -> Result<f64> {
    if inputs.len() != outputs.len() || inputs.is_empty() {
        return Err(Error::Contract(format!(
            "{} inputs against {} reconstructions",
            inputs.len(),
            outputs.len()
        )));
    }
    let mut total = 0.0;
    for (x, y) in inputs.iter().zip(outputs) {
        if x.shape() != y.shape() {
            return Err(Error::Shape(format!("patch {:?} vs reconstruction {:?}", x.shape(), y.shape())));
        }
        total += x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / inputs.len() as f64)
}

/// `q` together with the target derived from it.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentMatrix {
    pub q: Tensor,
    pub t: Tensor,
}

impl AssignmentMatrix {
    pub fn from_q(q: Tensor) -> Result<Self> {
        let t = target_distribution(&q)?;
        Ok(Self { q, t })
    }

    pub fn clusters(&self) -> usize {
        self.q.shape()[1]
    }

    /// Target row `i`.
    pub fn target_row(&self, i: usize) -> &[f64] {
        let j = self.clusters();
        &self.t.data()[i * j..(i + 1) * j]
    }

    /// Hard labels `argmax_j q_ij`, 0-based.
    pub fn hard_labels(&self) -> Vec<usize> {
        argmax_rows(&self.q)
    }

    pub fn loss(&self) -> f64 {
        clustering_loss(&self.t, &self.q).expect("matching shapes")
    }
}

pub(crate) fn argmax_rows(m: &Tensor) -> Vec<usize> {
    let j = m.shape()[1];
    m.data()
        .chunks(j)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Initial centers: k-means centroids over the latents (`N × n`).
pub fn init_centers(latents: &Tensor, clusters: usize, seed: u64) -> Result<Tensor> {
    let (_, n) = matrix_dims(latents, "latents")?;
    let mut rows: Vec<&[f64]> = latents.data().chunks(n).collect();
    rows.sort_by(|a, b| a.partial_cmp(b).expect("finite latents"));
    rows.dedup();
    if rows.len() < clusters {
        return Err(Error::Degenerate(format!(
            "{} distinct latents for {clusters} clusters",
            rows.len()
        )));
    }
    let fit = kmeans(latents.data(), n, clusters, seed, &Default::default())?;
    Tensor::new(vec![clusters, n], fit.model.centers)
}
