//! Preprocessing shared by every method, and the per-method runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hsiseg::baselines::{gmm_em, kmeans, GmmOptions, KmeansOptions};
use hsiseg::cae::{build_cae, CaeParams};
use hsiseg::hsi::{extract_patches, normalize, HsiCube, SegmentationMap};
use hsiseg::metrics::{evaluate, MetricsReport};
use hsiseg::reduction::{pca_fit, pca_transform, smsi_reduce, PcaModel};
use hsiseg::trainer::{segment, TrainReport, Trainer};
use hsiseg::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Method, Reduction, RunConfig};

pub const CHECKPOINT: &str = "model.ckpt";
pub const PIPELINE: &str = "pipeline.json";
pub const REPORT: &str = "report.json";
pub const TIMING: &str = "timing.json";

/// Fitted preprocessing, replayed verbatim at segmentation time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Preprocess {
    None,
    Pca { model: PcaModel },
    Smsi { bands: usize },
}

impl Preprocess {
    /// Fits the reduction on `cube`.
    pub fn fit(cube: &HsiCube, reduction: Reduction, bands: usize) -> Result<Self> {
        Ok(match reduction {
            Reduction::None | Reduction::External => Preprocess::None,
            Reduction::Pca => Preprocess::Pca { model: pca_fit(&cube.pixel_matrix(), cube.bands(), bands)? },
            Reduction::Smsi => Preprocess::Smsi { bands },
        })
    }

    /// Reduces, then rescales every band to `[0, 1]`.
    pub fn apply(&self, cube: &HsiCube) -> Result<HsiCube> {
        let reduced = match self {
            Preprocess::None => cube.clone(),
            Preprocess::Pca { model } => {
                let scores = pca_transform(model, &cube.pixel_matrix(), cube.bands())?;
                cube.with_pixel_matrix(model.dims, &scores)?
            }
            Preprocess::Smsi { bands } => smsi_reduce(cube, *bands)?,
        };
        Ok(normalize(&reduced))
    }
}

/// Wall-clock seconds per phase. Written apart from the reports so those
/// stay byte-identical between runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub reduction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clustering: Option<f64>,
    pub inference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub input_bands: usize,
    pub model_bands: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
}

/// Contents of `pipeline.json`: how to rebuild the model input from a raw cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub config: RunConfig,
    pub preprocess: Preprocess,
}

/// Contents of `timing.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub config: RunConfig,
    pub seconds: Timing,
}

/// Output of `evaluate`, naming the files it compared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub map: String,
    pub truth: String,
    pub metrics: MetricsReport,
}

pub struct RunOutput {
    pub params: Option<CaeParams>,
    pub preprocess: Preprocess,
    pub map: SegmentationMap,
    pub report: RunReport,
    pub timing: Timing,
}

fn secs(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

/// Trains the autoencoder on `cube` and labels every pixel with it.
pub fn run_cae(config: &RunConfig, cube: &HsiCube) -> Result<RunOutput> {
    config.validate()?;
    let mut timing = Timing::default();
    let start = Instant::now();
    let preprocess = Preprocess::fit(cube, config.reduction, config.reduced_bands)?;
    let prepared = preprocess.apply(cube)?;
    timing.reduction = secs(start);

    let model = config.model(prepared.bands());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = build_cae(&model, &mut rng)?;
    let data = extract_patches(&prepared, model.patch_spatial)?;
    let mut trainer = Trainer::new(params, config.train())?;

    let start = Instant::now();
    trainer.train_stage1(&data)?;
    timing.stage1 = Some(secs(start));
    let start = Instant::now();
    trainer.init_centers(&data)?;
    trainer.train_stage2(&data)?;
    timing.stage2 = Some(secs(start));

    let start = Instant::now();
    let map = segment(trainer.params(), &prepared)?;
    timing.inference = secs(start);
    let report = RunReport {
        config: config.clone(),
        input_bands: cube.bands(),
        model_bands: prepared.bands(),
        training: Some(trainer.report().clone()),
        metrics: score(&map, cube)?,
    };
    Ok(RunOutput { params: Some(trainer.into_params()), preprocess, map, report, timing })
}

/// Clusters pixels with k-means or a Gaussian mixture. Background pixels
/// (truth 0) are left out of the fit but labeled afterwards.
pub fn run_baseline(config: &RunConfig, cube: &HsiCube) -> Result<RunOutput> {
    if config.clusters == 0 {
        return Err(Error::Config("need at least one cluster".into()));
    }
    let mut timing = Timing::default();
    let start = Instant::now();
    let preprocess = Preprocess::fit(cube, config.reduction, config.reduced_bands)?;
    let prepared = preprocess.apply(cube)?;
    timing.reduction = secs(start);

    let dim = prepared.bands();
    let pixels = prepared.pixel_matrix();
    let fit_pixels: Vec<f64> = match prepared.labels() {
        Some(labels) => pixels
            .chunks(dim)
            .zip(labels)
            .filter(|(_, &l)| l != 0)
            .flat_map(|(p, _)| p.iter().copied())
            .collect(),
        None => pixels.clone(),
    };
    let start = Instant::now();
    let assigned: Vec<usize> = match config.method {
        Method::Kmeans => {
            let fit = kmeans(&fit_pixels, dim, config.clusters, config.seed, &KmeansOptions::default())?;
            pixels.chunks(dim).map(|p| fit.model.nearest(p).0).collect()
        }
        Method::Gmm => {
            let fit = gmm_em(&fit_pixels, dim, config.clusters, config.seed, &GmmOptions::default())?;
            fit.model.predict(&pixels)?
        }
        Method::Cae3d => return Err(Error::Config("the autoencoder is not a baseline; use train".into())),
    };
    timing.clustering = Some(secs(start));
    let labels = assigned.iter().map(|&j| j as u32 + 1).collect();
    let map = SegmentationMap::new(cube.width(), cube.height(), labels)?.with_background_from(cube.labels());
    let report = RunReport {
        config: config.clone(),
        input_bands: cube.bands(),
        model_bands: dim,
        training: None,
        metrics: score(&map, cube)?,
    };
    Ok(RunOutput { params: None, preprocess, map, report, timing })
}

fn score(map: &SegmentationMap, cube: &HsiCube) -> Result<Option<MetricsReport>> {
    match cube.labels() {
        Some(truth) if truth.iter().any(|&l| l != 0) => Ok(Some(evaluate(&map.labels, truth, true)?)),
        _ => Ok(None),
    }
}

pub fn write_report<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Writes checkpoint, preprocessing, report and timing into `dir`.
pub fn save_run(output: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if let Some(params) = &output.params {
        params.save(dir.join(CHECKPOINT))?;
    }
    let config = output.report.config.clone();
    write_report(&dir.join(PIPELINE), &Sidecar { config: config.clone(), preprocess: output.preprocess.clone() })?;
    write_report(&dir.join(REPORT), &output.report)?;
    write_report(&dir.join(TIMING), &TimingReport { config, seconds: output.timing.clone() })
}

/// Loads a checkpoint and the preprocessing saved beside it.
pub fn load_model(checkpoint: &Path) -> Result<(CaeParams, Preprocess)> {
    let params = CaeParams::load(checkpoint)?;
    let sidecar: PathBuf = checkpoint.with_file_name(PIPELINE);
    let preprocess = if sidecar.exists() { read_json::<Sidecar>(&sidecar)?.preprocess } else { Preprocess::None };
    Ok((params, preprocess))
}

/// Labels `cube` with a trained model, replaying its preprocessing.
pub fn segment_cube(params: &CaeParams, preprocess: &Preprocess, cube: &HsiCube) -> Result<SegmentationMap> {
    let prepared = preprocess.apply(cube)?;
    if prepared.bands() != params.config().bands {
        return Err(Error::Config(format!(
            "checkpoint expects {} bands, preprocessed cube has {}",
            params.config().bands,
            prepared.bands()
        )));
    }
    segment(params, &prepared)
}
