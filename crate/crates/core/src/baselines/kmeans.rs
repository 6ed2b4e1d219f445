use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KmeansOptions {
    /// Stop once no center moves farther than this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for KmeansOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 300 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KmeansModel {
    pub k: usize,
    pub dim: usize,
    /// Row-major `k × dim`.
    pub centers: Vec<f64>,
    /// Total within-cluster squared distance of the returned labels.
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every assignment step.
    pub inertia_trace: Vec<f64>,
}

impl KmeansModel {
    pub fn center(&self, j: usize) -> &[f64] {
        &self.centers[j * self.dim..(j + 1) * self.dim]
    }

    /// Index of the nearest center and the squared distance to it.
    pub fn nearest(&self, point: &[f64]) -> (usize, f64) {
        nearest(point, &self.centers, self.dim)
    }
}

#[derive(Clone, Debug)]
pub struct KmeansFit {
    pub model: KmeansModel,
    /// 0-based cluster per point.
    pub labels: Vec<usize>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[f64], dim: usize) -> (usize, f64) {
    centers
        .chunks(dim)
        .map(|c| sq_dist(point, c))
        .enumerate()
        .fold((0, f64::INFINITY), |best, (j, d)| if d < best.1 { (j, d) } else { best })
}

fn assign(points: &[f64], centers: &[f64], dim: usize) -> (Vec<usize>, Vec<f64>) {
    points.par_chunks(dim).map(|p| nearest(p, centers, dim)).unzip()
}

fn plus_plus_seeds(points: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = points.chunks(dim).map(|p| sq_dist(p, &centers[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = &points[pick * dim..(pick + 1) * dim];
        centers.extend_from_slice(c);
        for (d, p) in d2.iter_mut().zip(points.chunks(dim)) {
            *d = d.min(sq_dist(p, c));
        }
    }
    centers
}

/// Moves the point farthest from its center into each empty cluster.
fn repair_empty(points: &[f64], dim: usize, centers: &mut [f64], labels: &mut [usize], dists: &mut [f64]) {
    let k = centers.len() / dim;
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    for j in 0..k {
        if sizes[j] > 0 {
            continue;
        }
        let donor = (0..labels.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            });
        let Some(i) = donor else { continue };
        sizes[labels[i]] -= 1;
        sizes[j] = 1;
        labels[i] = j;
        dists[i] = 0.0;
        centers[j * dim..(j + 1) * dim].copy_from_slice(&points[i * dim..(i + 1) * dim]);
    }
}

fn update_centers(points: &[f64], dim: usize, labels: &[usize], centers: &mut [f64]) {
    let k = centers.len() / dim;
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.chunks(dim).zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(p) {
            *s += v;
        }
    }
    for j in 0..k {
        if counts[j] > 0 {
            for t in 0..dim {
                centers[j * dim + t] = sums[j * dim + t] / counts[j] as f64;
            }
        }
    }
}

/// k-means with k-means++ seeding and Lloyd iterations over row-major `N × dim` points.
pub fn kmeans(points: &[f64], dim: usize, k: usize, seed: u64, opts: &KmeansOptions) -> Result<KmeansFit> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::Shape(format!("{} values do not form {dim}-dimensional points", points.len())));
    }
    let n = points.len() / dim;
    if k == 0 || n < k {
        return Err(Error::InsufficientData(format!("{n} points for {k} clusters")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("non-finite point coordinate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_seeds(points, dim, k, &mut rng);
    let mut trace = Vec::new();
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let (mut labels, mut dists) = assign(points, &centers, dim);
        repair_empty(points, dim, &mut centers, &mut labels, &mut dists);
        trace.push(dists.iter().sum());
        let previous = centers.clone();
        update_centers(points, dim, &labels, &mut centers);
        let shift = centers
            .chunks(dim)
            .zip(previous.chunks(dim))
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        if shift < opts.tol {
            break;
        }
    }

    let (mut labels, mut dists) = assign(points, &centers, dim);
    repair_empty(points, dim, &mut centers, &mut labels, &mut dists);
    let inertia: f64 = dists.iter().sum();
    trace.push(inertia);
    Ok(KmeansFit {
        model: KmeansModel { k, dim, centers, inertia, iterations, inertia_trace: trace },
        labels,
    })
}
