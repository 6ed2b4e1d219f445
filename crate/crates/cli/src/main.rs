use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hsiseg::hsi::{
    convert_raw, load_cube, load_labels, write_cube, write_labels, ByteOrder, HsiCube, Interleave, RawLayout,
    SampleType, SegmentationMap,
};
use hsiseg::metrics::evaluate;
use hsiseg::synth::{generate, SynthConfig};
use hsiseg::{Error, Result};
use hsiseg_cli::config::{Method, Reduction, RunConfig};
use hsiseg_cli::pipeline::{load_model, EvaluateReport, run_baseline, run_cae, save_run, segment_cube, Preprocess};
use hsiseg_cli::render::write_ppm;
use hsiseg_cli::{category_name, exit_code};

#[derive(Parser)]
#[command(name = "hsiseg", version, about = "Unsupervised hyperspectral segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a striped synthetic cube with ground truth.
    Synth {
        /// Cube header to write; ground truth goes to the same stem with `.gt`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 40)]
        bands: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        /// Standard deviation of the added Gaussian noise.
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convert a headerless raw file into a .hsic cube.
    Convert {
        /// Headerless sample file, e.g. an ENVI `.img`.
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        bands: usize,
        #[arg(long, value_enum)]
        interleave: RawInterleave,
        #[arg(long, value_enum)]
        dtype: RawSample,
        #[arg(long, value_enum, default_value = "little")]
        byte_order: RawOrder,
        /// Header bytes to skip.
        #[arg(long, default_value_t = 0)]
        offset: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reduce a cube to fewer bands.
    Reduce {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long, value_enum)]
        reduction: Reduction,
        /// Target band count (PCA components or S-MSI windows).
        #[arg(long, default_value_t = 25)]
        bands: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the autoencoder and write checkpoint, report and map.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Label a cube with a trained checkpoint.
    Segment {
        /// `model.ckpt` from `train`; `pipeline.json` must sit next to it.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also draw the map as a PPM image here.
        #[arg(long)]
        ppm: Option<PathBuf>,
    },
    /// Cluster pixels with k-means or a Gaussian mixture.
    Baseline {
        #[command(flatten)]
        run: RunArgs,
        /// Overrides the config's method; defaults to k-means when neither names a baseline.
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compare a label map with ground truth.
    Evaluate {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Write the metrics JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON run configuration; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    cube: PathBuf,
    /// Ground truth; enables background masking and metrics.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    reduction: Option<Reduction>,
    /// Draw the map as a PPM image too.
    #[arg(long)]
    ppm: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum RawInterleave {
    Bsq,
    Bil,
    Bip,
}

#[derive(Clone, Copy, ValueEnum)]
enum RawSample {
    U8,
    U16,
    I16,
    I32,
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum RawOrder {
    Little,
    Big,
}

impl RunArgs {
    fn resolve(&self) -> Result<(RunConfig, HsiCube)> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.clusters {
            cfg.clusters = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.reduction {
            cfg.reduction = v;
        }
        let cube = load_with_truth(&self.cube, self.truth.as_deref())?;
        Ok((cfg, cube))
    }
}

fn load_with_truth(cube: &Path, truth: Option<&Path>) -> Result<HsiCube> {
    let cube = load_cube(cube)?;
    match truth {
        Some(path) => {
            let raster = load_labels(path)?;
            if (raster.width, raster.height) != (cube.width(), cube.height()) {
                return Err(Error::Contract(format!(
                    "truth is {}x{}, cube is {}x{}",
                    raster.width,
                    raster.height,
                    cube.width(),
                    cube.height()
                )));
            }
            cube.with_labels(raster.labels)
        }
        None => Ok(cube),
    }
}

fn write_map(map: &SegmentationMap, out: &Path, ppm: Option<&Path>) -> Result<()> {
    write_labels(out, map.width, map.height, &map.labels)?;
    if let Some(p) = ppm {
        write_ppm(p, map)?;
    }
    Ok(())
}

fn print_json<T: serde::Serialize>(value: &T) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).expect("serializable");
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, width, height, bands, classes, noise, seed } => {
            let cube = generate(&SynthConfig { width, height, bands, classes, noise_sigma: noise, seed })?;
            write_cube(&cube, &out)?;
            let labels = cube.labels().expect("synthetic cubes are labeled");
            write_labels(out.with_extension("gt"), width, height, labels)?;
        }
        Command::Convert { raw, width, height, bands, interleave, dtype, byte_order, offset, out } => {
            let layout = RawLayout {
                width,
                height,
                bands,
                interleave: match interleave {
                    RawInterleave::Bsq => Interleave::Bsq,
                    RawInterleave::Bil => Interleave::Bil,
                    RawInterleave::Bip => Interleave::Bip,
                },
                sample: match dtype {
                    RawSample::U8 => SampleType::U8,
                    RawSample::U16 => SampleType::U16,
                    RawSample::I16 => SampleType::I16,
                    RawSample::I32 => SampleType::I32,
                    RawSample::F32 => SampleType::F32,
                    RawSample::F64 => SampleType::F64,
                },
                byte_order: match byte_order {
                    RawOrder::Little => ByteOrder::Little,
                    RawOrder::Big => ByteOrder::Big,
                },
                offset,
            };
            let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
            write_cube(&convert_raw(&bytes, &layout)?, &out)?;
        }
        Command::Reduce { cube, reduction, bands, out } => {
            let cube = load_cube(&cube)?;
            let reduced = match Preprocess::fit(&cube, reduction, bands)? {
                Preprocess::None => cube,
                Preprocess::Pca { model } => {
                    let scores = hsiseg::reduction::pca_transform(&model, &cube.pixel_matrix(), cube.bands())?;
                    cube.with_pixel_matrix(model.dims, &scores)?
                }
                Preprocess::Smsi { bands } => hsiseg::reduction::smsi_reduce(&cube, bands)?,
            };
            write_cube(&reduced, &out)?;
        }
        Command::Train { run, out_dir } => {
            let (cfg, cube) = run.resolve()?;
            if cfg.method != Method::Cae3d {
                return Err(Error::Config("train runs the autoencoder; use baseline for k-means or gmm".into()));
            }
            let output = run_cae(&cfg, &cube)?;
            save_run(&output, &out_dir)?;
            let ppm = out_dir.join("map.ppm");
            write_map(&output.map, &out_dir.join("map.gt"), run.ppm.then_some(ppm.as_path()))?;
            print_json(&output.report);
        }
        Command::Segment { checkpoint, cube, out, ppm } => {
            let (params, preprocess) = load_model(&checkpoint)?;
            let cube = load_cube(&cube)?;
            let map = segment_cube(&params, &preprocess, &cube)?;
            write_map(&map, &out, ppm.as_deref())?;
        }
        Command::Baseline { run, method, out_dir } => {
            let (mut cfg, cube) = run.resolve()?;
            cfg.method = match (method, cfg.method) {
                (Some(m), _) => m,
                (None, Method::Cae3d) => Method::Kmeans,
                (None, m) => m,
            };
            let output = run_baseline(&cfg, &cube)?;
            save_run(&output, &out_dir)?;
            let ppm = out_dir.join("map.ppm");
            write_map(&output.map, &out_dir.join("map.gt"), run.ppm.then_some(ppm.as_path()))?;
            print_json(&output.report);
        }
        Command::Evaluate { map: map_path, truth: truth_path, out } => {
            let map = load_labels(&map_path)?;
            let truth = load_labels(&truth_path)?;
            if (map.width, map.height) != (truth.width, truth.height) {
                return Err(Error::Contract(format!(
                    "map is {}x{}, truth is {}x{}",
                    map.width, map.height, truth.width, truth.height
                )));
            }
            let report = EvaluateReport {
                map: map_path.display().to_string(),
                truth: truth_path.display().to_string(),
                metrics: evaluate(&map.labels, &truth.labels, true)?,
            };
            match out {
                Some(path) => hsiseg_cli::pipeline::write_report(&path, &report)?,
                None => print_json(&report),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({}): {e}", category_name(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
