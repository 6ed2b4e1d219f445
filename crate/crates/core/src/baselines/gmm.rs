use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, KmeansOptions};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    /// Added to every covariance diagonal.
    pub ridge: f64,
    /// Stop when the mean log-likelihood improves by less than this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self { ridge: 1e-6, tol: 1e-6, max_iter: 200 }
    }
}

/// Full-covariance Gaussian mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub k: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    /// Row-major `k × dim`.
    pub means: Vec<f64>,
    /// `k` row-major `dim × dim` blocks.
    pub covariances: Vec<f64>,
    /// Mean per-point log-likelihood at the start of every iteration.
    pub log_likelihood_trace: Vec<f64>,
}

impl GmmModel {
    pub fn mean(&self, j: usize) -> &[f64] {
        &self.means[j * self.dim..(j + 1) * self.dim]
    }

    pub fn covariance(&self, j: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.covariances[j * dd..(j + 1) * dd]
    }

    /// Most responsible component of every point, 0-based.
    pub fn predict(&self, points: &[f64]) -> Result<Vec<usize>> {
        if points.len() % self.dim != 0 {
            return Err(Error::Shape(format!("{} values do not form {}-dimensional points", points.len(), self.dim)));
        }
        let (resp, _) = e_step(points, self.dim, self)?;
        Ok(argmax_rows(&resp, self.k))
    }
}

#[derive(Clone, Debug)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Row-major `N × k` responsibilities from the final E-step.
    pub responsibilities: Vec<f64>,
    /// `argmax` responsibility per point, 0-based.
    pub labels: Vec<usize>,
}

/// Lower-triangular Cholesky factor (row-major) and log-determinant.
struct Component {
    log_weight: f64,
    chol: Vec<f64>,
    half_log_det: f64,
}

fn factor(cov: &[f64], dim: usize, index: usize, log_weight: f64) -> Result<Component> {
    let m = DMatrix::from_row_slice(dim, dim, cov);
    let chol = m.cholesky().ok_or_else(|| {
        let min_diag = (0..dim).map(|i| cov[i * dim + i]).fold(f64::INFINITY, f64::min);
        Error::Numerical(format!(
            "covariance of component {index} is not positive definite (smallest diagonal {min_diag:e})"
        ))
    })?;
    let l = chol.l();
    let mut rows = vec![0.0; dim * dim];
    let mut half_log_det = 0.0;
    for i in 0..dim {
        for j in 0..=i {
            rows[i * dim + j] = l[(i, j)];
        }
        half_log_det += l[(i, i)].ln();
    }
    Ok(Component { log_weight, chol: rows, half_log_det })
}

fn log_density(x: &[f64], mean: &[f64], comp: &Component, scratch: &mut [f64]) -> f64 {
    let dim = x.len();
    // Solve L y = x − μ.
    let mut maha = 0.0;
    for i in 0..dim {
        let row = &comp.chol[i * dim..i * dim + i];
        let s: f64 = row.iter().zip(&scratch[..i]).map(|(l, y)| l * y).sum();
        let y = (x[i] - mean[i] - s) / comp.chol[i * dim + i];
        scratch[i] = y;
        maha += y * y;
    }
    -0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + maha) - comp.half_log_det
}

/// Responsibilities (row-major `N × k`) and per-point log-likelihoods.
fn e_step(points: &[f64], dim: usize, model: &GmmModel) -> Result<(Vec<f64>, Vec<f64>)> {
    let comps = (0..model.k)
        .map(|j| factor(model.covariance(j), dim, j, model.weights[j].ln()))
        .collect::<Result<Vec<_>>>()?;
    let k = model.k;
    let rows: Vec<(Vec<f64>, f64)> = points
        .par_chunks(dim)
        .map_init(
            || vec![0.0; dim],
            |scratch, x| {
                let logs: Vec<f64> = comps
                    .iter()
                    .enumerate()
                    .map(|(j, c)| c.log_weight + log_density(x, model.mean(j), c, scratch))
                    .collect();
                let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + logs.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                (logs.iter().map(|v| (v - lse).exp()).collect(), lse)
            },
        )
        .collect();
    let mut resp = Vec::with_capacity(rows.len() * k);
    let mut ll = Vec::with_capacity(rows.len());
    for (r, l) in rows {
        resp.extend(r);
        ll.push(l);
    }
    Ok((resp, ll))
}

fn m_step(points: &[f64], dim: usize, resp: &[f64], k: usize, ridge: f64, model: &mut GmmModel) {
    let n = points.len() / dim;
    for j in 0..k {
        let nk: f64 = resp.iter().skip(j).step_by(k).sum();
        // Guard only a vanished component so populated ones keep exact means.
        let nk = if nk > 0.0 { nk } else { 10.0 * f64::EPSILON };
        let mut mean = vec![0.0; dim];
        for (x, r) in points.chunks(dim).zip(resp.chunks(k)) {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += r[j] * v;
            }
        }
        for m in &mut mean {
            *m /= nk;
        }
        let mut cov = vec![0.0; dim * dim];
        let mut diff = vec![0.0; dim];
        for (x, r) in points.chunks(dim).zip(resp.chunks(k)) {
            let w = r[j];
            if w == 0.0 {
                continue;
            }
            for ((d, a), b) in diff.iter_mut().zip(x).zip(&mean) {
                *d = a - b;
            }
            for a in 0..dim {
                let wa = w * diff[a];
                for b in 0..=a {
                    cov[a * dim + b] += wa * diff[b];
                }
            }
        }
        for a in 0..dim {
            for b in 0..=a {
                let v = cov[a * dim + b] / nk;
                cov[a * dim + b] = v;
                cov[b * dim + a] = v;
            }
            cov[a * dim + a] += ridge;
        }
        model.weights[j] = nk / n as f64;
        model.means[j * dim..(j + 1) * dim].copy_from_slice(&mean);
        model.covariances[j * dim * dim..(j + 1) * dim * dim].copy_from_slice(&cov);
    }
}

fn argmax_rows(resp: &[f64], k: usize) -> Vec<usize> {
    resp.chunks(k)
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (j, &v)| if v > b.1 { (j, v) } else { b })
                .0
        })
        .collect()
}

/// EM for a full-covariance mixture, initialized from a k-means run with the same seed.
pub fn gmm_em(points: &[f64], dim: usize, k: usize, seed: u64, opts: &GmmOptions) -> Result<GmmFit> {
    let init = kmeans(points, dim, k, seed, &KmeansOptions::default())?;
    let n = points.len() / dim;
    let hard: Vec<f64> = init
        .labels
        .iter()
        .flat_map(|&l| (0..k).map(move |j| if j == l { 1.0 } else { 0.0 }))
        .collect();
    let mut model = GmmModel {
        k,
        dim,
        weights: vec![0.0; k],
        means: vec![0.0; k * dim],
        covariances: vec![0.0; k * dim * dim],
        log_likelihood_trace: Vec::new(),
    };
    m_step(points, dim, &hard, k, opts.ridge, &mut model);

    let mut resp;
    loop {
        let (r, ll) = e_step(points, dim, &model)?;
        resp = r;
        let mean_ll = ll.iter().sum::<f64>() / n as f64;
        if !mean_ll.is_finite() {
            return Err(Error::Numerical("log-likelihood is not finite".into()));
        }
        let previous = model.log_likelihood_trace.last().copied();
        model.log_likelihood_trace.push(mean_ll);
        let converged = previous.is_some_and(|p| mean_ll - p < opts.tol);
        if converged || model.log_likelihood_trace.len() > opts.max_iter {
            break;
        }
        m_step(points, dim, &resp, k, opts.ridge, &mut model);
    }
    let labels = argmax_rows(&resp, k);
    Ok(GmmFit { model, responsibilities: resp, labels })
}
