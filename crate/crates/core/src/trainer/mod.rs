//! Two-stage optimization of the autoencoder and its clustering layer.
//!
//! Stage 1 minimizes reconstruction error alone until the epoch-mean loss
//! settles. Centers are then seeded by k-means over the stage-1 embeddings,
//! and stage 2 minimizes `L_r + alpha · L_c` for a fixed number of epochs,
//! refreshing the target distribution from the whole training set at the
//! start of each one.

mod adam;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState};

use crate::autodiff::{Mode, Tape, Tensor};
use crate::cae::{self, encode, patch_objective, soft_assign, AssignmentMatrix, CaeConfig, CaeParams, ClusterTerm};
use crate::hsi::{extract_all_patches, HsiCube, PatchBatch, SegmentationMap};
use crate::{Error, Result};

/// Patches per gradient chunk. Chunks are reduced in index order, so the
/// result does not depend on how rayon schedules them.
const CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Stage 1 stops once successive epoch losses differ by less than this.
    pub epsilon: f64,
    /// Safety cap on stage-1 epochs.
    pub max_stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 256,
            epsilon: 1e-6,
            max_stage1_epochs: 500,
            stage2_epochs: 25,
            alpha: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config(format!("stopping threshold {} must be non-negative", self.epsilon)));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("loss weight {} outside [0, 1)", self.alpha)));
        }
        Ok(())
    }
}

/// Why stage 1 ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage1Stop {
    Converged,
    EpochCap,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub reconstruction: f64,
    pub clustering: f64,
    pub total: f64,
}

/// Deterministic training record. Wall-clock time is kept out of the
/// serialized form so identical runs serialize identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub model: CaeConfig,
    pub train: TrainConfig,
    pub training_patches: usize,
    pub parameter_count: usize,
    pub stage1_epochs: usize,
    pub stage1_losses: Vec<f64>,
    pub stage1_stop: Option<Stage1Stop>,
    pub stage2_losses: Vec<EpochLoss>,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

pub struct Trainer {
    params: CaeParams,
    adam: AdamState,
    rng: ChaCha8Rng,
    config: TrainConfig,
    report: TrainReport,
}

impl Trainer {
    pub fn new(params: CaeParams, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        params.config().validate()?;
        let report = TrainReport {
            seed: config.seed,
            model: params.config().clone(),
            train: config.clone(),
            training_patches: 0,
            parameter_count: params.parameter_count(),
            stage1_epochs: 0,
            stage1_losses: Vec::new(),
            stage1_stop: None,
            stage2_losses: Vec::new(),
            wall_time_secs: 0.0,
        };
        Ok(Self {
            adam: AdamState::new(config.lr),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            params,
            config,
            report,
        })
    }

    pub fn params(&self) -> &CaeParams {
        &self.params
    }

    pub fn into_params(self) -> CaeParams {
        self.params
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    fn check_data(&mut self, data: &PatchBatch) -> Result<()> {
        if data.patch_shape() != self.params.config().patch_shape() {
            return Err(Error::Shape(format!(
                "patches {:?} do not match the model input {:?}",
                data.patch_shape(),
                self.params.config().patch_shape()
            )));
        }
        if data.is_empty() {
            return Err(Error::InsufficientData("no training patches".into()));
        }
        self.report.training_patches = data.len();
        Ok(())
    }

    /// Runs stage 1 to convergence or the epoch cap; returns the epoch losses.
    pub fn train_stage1(&mut self, data: &PatchBatch) -> Result<&[f64]> {
        self.check_data(data)?;
        let start = Instant::now();
        self.report.stage1_losses.clear();
        let stop = loop {
            let loss = self.run_epoch(data, None)?.reconstruction;
            self.report.stage1_losses.push(loss);
            let losses = &self.report.stage1_losses;
            if let [.., prev, last] = losses[..] {
                if (last - prev).abs() < self.config.epsilon {
                    break Stage1Stop::Converged;
                }
            }
            if losses.len() >= self.config.max_stage1_epochs {
                break Stage1Stop::EpochCap;
            }
        };
        self.report.stage1_stop = Some(stop);
        self.report.stage1_epochs = self.report.stage1_losses.len();
        self.report.wall_time_secs += start.elapsed().as_secs_f64();
        Ok(&self.report.stage1_losses)
    }

    /// Seeds the centers with k-means over the current embeddings of `data`.
    pub fn init_centers(&mut self, data: &PatchBatch) -> Result<()> {
        self.check_data(data)?;
        let latents = embed(&self.params, data)?;
        let centers = cae::init_centers(&latents, self.params.config().clusters, self.config.seed)?;
        self.params.set_centers(centers)
    }

    /// Runs the configured number of stage-2 epochs.
    pub fn train_stage2(&mut self, data: &PatchBatch) -> Result<&[EpochLoss]> {
        self.check_data(data)?;
        if self.params.centers().is_none() {
            return Err(Error::State("stage 2 needs initialized cluster centers".into()));
        }
        let start = Instant::now();
        for _ in 0..self.config.stage2_epochs {
            let latents = embed(&self.params, data)?;
            let assignments = AssignmentMatrix::from_q(soft_assign(&latents, self.params.centers())?)?;
            let loss = self.run_epoch(data, Some(&assignments))?;
            self.report.stage2_losses.push(loss);
        }
        self.report.wall_time_secs += start.elapsed().as_secs_f64();
        Ok(&self.report.stage2_losses)
    }

    /// Stage 1, center initialization and stage 2 in sequence.
    pub fn fit(&mut self, data: &PatchBatch) -> Result<&TrainReport> {
        self.train_stage1(data)?;
        self.init_centers(data)?;
        self.train_stage2(data)?;
        Ok(&self.report)
    }

    fn run_epoch(&mut self, data: &PatchBatch, targets: Option<&AssignmentMatrix>) -> Result<EpochLoss> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let alpha = self.config.alpha;
        let (mut sum_r, mut sum_c, mut batches) = (0.0, 0.0, 0usize);
        for batch in order.chunks(self.config.batch_size) {
            let seed = self.rng.random::<u64>();
            let step = batch_gradients(&self.params, data, batch, targets, alpha, seed)?;
            let lr = step.squared_error / batch.len() as f64;
            if !lr.is_finite() || !step.kl.is_finite() {
                return Err(Error::Numerical(format!("loss diverged (L_r = {lr}, L_c = {})", step.kl)));
            }
            sum_r += lr;
            sum_c += step.kl;
            batches += 1;

            let mut slots: Vec<&mut Tensor> = Vec::new();
            let mut grads = step.weights;
            let (weights, centers) = self.params.tensors_mut();
            slots.extend(weights.iter_mut());
            if targets.is_some() {
                if let (Some(c), Some(g)) = (centers, step.centers) {
                    slots.push(c);
                    grads.push(g);
                }
            }
            adam_step(&mut slots, &grads, &mut self.adam)?;
        }
        let reconstruction = sum_r / batches as f64;
        let clustering = sum_c / batches as f64;
        Ok(EpochLoss { reconstruction, clustering, total: reconstruction + alpha * clustering })
    }
}

struct BatchStep {
    weights: Vec<Tensor>,
    centers: Option<Tensor>,
    squared_error: f64,
    kl: f64,
}

impl BatchStep {
    fn zeros(params: &CaeParams, with_centers: bool) -> Self {
        Self {
            weights: params.weights().iter().map(|w| Tensor::zeros(w.shape())).collect(),
            centers: params.centers().filter(|_| with_centers).map(|c| Tensor::zeros(c.shape())),
            squared_error: 0.0,
            kl: 0.0,
        }
    }

    fn absorb(&mut self, other: &BatchStep) -> Result<()> {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.add_assign(b)?;
        }
        if let (Some(a), Some(b)) = (self.centers.as_mut(), other.centers.as_ref()) {
            a.add_assign(b)?;
        }
        self.squared_error += other.squared_error;
        self.kl += other.kl;
        Ok(())
    }
}

/// Gradient of the batch objective. Each patch gets its own dropout stream
/// derived from `seed` and its position in the batch.
fn batch_gradients(
    params: &CaeParams,
    data: &PatchBatch,
    batch: &[usize],
    targets: Option<&AssignmentMatrix>,
    alpha: f64,
    seed: u64,
) -> Result<BatchStep> {
    let config = params.config();
    let weight = 1.0 / batch.len() as f64;
    let with_centers = targets.is_some();
    let partials: Vec<Result<BatchStep>> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, idx)| {
            let mut acc = BatchStep::zeros(params, with_centers);
            for (k, &i) in idx.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream((c * CHUNK + k) as u64);
                let patch = data.patch(i);
                let mut tape = Tape::new();
                let vars = params.register(&mut tape);
                let cluster = targets.map(|t| ClusterTerm { target: t.target_row(i), alpha });
                let obj = patch_objective(&mut tape, &vars, config, &patch, weight, cluster, Mode::Train, &mut rng)?;
                let mut grads = tape.backward(obj.root)?;
                for (a, v) in acc.weights.iter_mut().zip(&vars.weights) {
                    if let Some(g) = grads.take(*v) {
                        a.add_assign(&g)?;
                    }
                }
                if let (Some(a), Some(v)) = (acc.centers.as_mut(), vars.centers) {
                    if let Some(g) = grads.take(v) {
                        a.add_assign(&g)?;
                    }
                }
                acc.squared_error += obj.squared_error;
                acc.kl += obj.kl;
            }
            Ok(acc)
        })
        .collect();
    let mut total = BatchStep::zeros(params, with_centers);
    for p in partials {
        total.absorb(&p?)?;
    }
    Ok(total)
}

/// Inference-mode embeddings of every patch, `[N, n]`.
pub fn embed(params: &CaeParams, data: &PatchBatch) -> Result<Tensor> {
    let n = params.config().embedding_dim;
    let rows: Vec<Result<Tensor>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            // Dropout is the identity in inference mode; the rng is never drawn.
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            encode(params, &data.patch(i), Mode::Infer, &mut rng)
        })
        .collect();
    let mut out = Vec::with_capacity(data.len() * n);
    for r in rows {
        out.extend_from_slice(r?.data());
    }
    Tensor::new(vec![data.len(), n], out)
}

/// Labels every pixel of `cube` with `argmax_j q_ij + 1`.
pub fn segment(params: &CaeParams, cube: &HsiCube) -> Result<SegmentationMap> {
    let config = params.config();
    if params.centers().is_none() {
        return Err(Error::State("model has no cluster centers; train it first".into()));
    }
    if cube.bands() != config.bands {
        return Err(Error::Config(format!(
            "model expects {} bands, cube has {}",
            config.bands,
            cube.bands()
        )));
    }
    let patches = extract_all_patches(cube, config.patch_spatial)?;
    let latents = embed(params, &patches)?;
    let q = soft_assign(&latents, params.centers())?;
    let mut labels = vec![0u32; cube.pixel_count()];
    for ((x, y), j) in patches.coords().iter().zip(cae::argmax_rows(&q)) {
        labels[y * cube.width() + x] = j as u32 + 1;
    }
    Ok(SegmentationMap::new(cube.width(), cube.height(), labels)?.with_background_from(cube.labels()))
}
