//! Command-line surface. Every parsed invocation is a serializable
//! [`RunConfig`]; a saved config replays the run byte-identically.

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use svr_core::phantom::PhantomKind;
use svr_core::predictor::Similarity;
use svr_core::sampler::{SamplingConfig, SchemeParams, TzRange};
use svr_core::volume::{Dtype, Volume};

#[derive(Debug, Parser, Serialize, Deserialize)]
#[command(
    name = "svr",
    about = "Slice-to-volume registration pipeline: synthetic phantoms, slice sampling, \
             dictionary pose prediction, evaluation and reconstruction",
    version
)]
pub struct Cli {
    /// Worker threads for parallel stages (0 = all cores). Outputs are
    /// byte-identical for any value.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Master RNG seed for every stochastic stage.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Verbose progress reporting on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    #[serde(default)]
    pub verbose: u8,

    /// Write the resolved run configuration (JSON) to this path.
    #[arg(long, global = true, value_name = "FILE")]
    pub save_config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a deterministic synthetic test volume (SPV1).
    Phantom(PhantomArgs),
    /// Sample poses, extract slices and write a labeled dataset.
    GenDataset(GenDatasetArgs),
    /// Build a template dictionary over a pose sampling grid.
    BuildDict(BuildDictArgs),
    /// Predict slice poses with Monte-Carlo confidence estimates.
    Predict(PredictArgs),
    /// Compare predicted poses (and optionally re-extracted images) to ground truth.
    Evaluate(EvaluateArgs),
    /// Reconstruct a volume from slices and poses (Gaussian average + optional SVR).
    Reconstruct(ReconstructArgs),
    /// Re-run a saved configuration byte-identically.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKindArg {
    Gradient,
    Shells,
    Sinusoid,
}

impl From<PhantomKindArg> for PhantomKind {
    fn from(k: PhantomKindArg) -> Self {
        match k {
            PhantomKindArg::Gradient => PhantomKind::Gradient,
            PhantomKindArg::Shells => PhantomKind::Shells,
            PhantomKindArg::Sinusoid => PhantomKind::Sinusoid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DtypeArg {
    U8,
    F32,
}

impl From<DtypeArg> for Dtype {
    fn from(d: DtypeArg) -> Self {
        match d {
            DtypeArg::U8 => Dtype::U8,
            DtypeArg::F32 => Dtype::F32,
        }
    }
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct PhantomArgs {
    /// Phantom kind.
    #[arg(long, value_enum)]
    pub kind: PhantomKindArg,
    /// Cubic grid side (voxels).
    #[arg(long, default_value_t = 64)]
    pub dims: usize,
    /// Isotropic voxel spacing (mm).
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    /// Payload scalar type of the output file.
    #[arg(long, value_enum, default_value = "f32")]
    #[serde(default = "default_dtype")]
    pub dtype: DtypeArg,
    /// Output SPV1 volume path.
    #[arg(long)]
    pub out: PathBuf,
}

fn default_dtype() -> DtypeArg {
    DtypeArg::F32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeArg {
    Euler,
    UniformPolar,
    Fibonacci,
    Random,
}

/// Sampling flags shared by `gen-dataset` and `build-dict`.
#[derive(Debug, Args, Serialize, Deserialize)]
pub struct SamplingArgs {
    /// Pose sampling scheme.
    #[arg(long, value_enum)]
    pub scheme: SchemeArg,

    /// Euler grid angle step (degrees); must divide 180 evenly.
    #[arg(long, default_value_t = 18.0)]
    pub step: f64,

    /// Number of sphere normals (fibonacci scheme).
    #[arg(long, default_value_t = 300)]
    pub normals: usize,

    /// In-plane rotations per normal, spanning [0, 180) degrees.
    #[arg(long, default_value_t = 10)]
    pub inplane: usize,

    /// Azimuth count (uniform-polar scheme).
    #[arg(long, default_value_t = 20)]
    pub nphi: usize,

    /// Polar count (uniform-polar scheme).
    #[arg(long, default_value_t = 15)]
    pub ntheta: usize,

    /// Pose count (random scheme).
    #[arg(long, default_value_t = 500)]
    pub count: usize,

    /// Plane-normal shift grid (mm): MIN MAX STEP, half-open [MIN, MAX).
    #[arg(long, num_args = 3, value_names = ["MIN", "MAX", "STEP"], allow_negative_numbers = true, default_values_t = [-40.0, 40.0, 2.0])]
    pub tz: Vec<f64>,

    /// Slice side (pixels); defaults to the volume's x dimension.
    #[arg(long)]
    pub slice_px: Option<usize>,

    /// Slice pixel spacing (mm); defaults to the volume spacing.
    #[arg(long)]
    pub slice_spacing: Option<f64>,

    /// Minimum nonzero-pixel fraction for a slice to be kept.
    #[arg(long, default_value_t = 0.05)]
    pub min_content: f64,

    /// Identity-plane anchor half-size (mm); defaults to the slice side.
    #[arg(long)]
    pub anchor_scale: Option<f64>,
}

impl SamplingArgs {
    pub fn to_config(&self, volume: &Volume, seed: u64) -> anyhow::Result<SamplingConfig> {
        let scheme = match self.scheme {
            SchemeArg::Euler => SchemeParams::EulerGrid {
                angle_step: self.step.to_radians(),
            },
            SchemeArg::UniformPolar => SchemeParams::UniformPolar {
                n_phi: self.nphi,
                n_theta: self.ntheta,
                n_inplane: self.inplane,
            },
            SchemeArg::Fibonacci => SchemeParams::Fibonacci {
                n_normals: self.normals,
                n_inplane: self.inplane,
            },
            SchemeArg::Random => SchemeParams::Random { count: self.count },
        };
        anyhow::ensure!(self.tz.len() == 3, "--tz takes MIN MAX STEP");
        let tz = TzRange {
            min: self.tz[0],
            max: self.tz[1],
            step: self.tz[2],
        };
        anyhow::ensure!(tz.step > 0.0, "tz STEP must be positive");
        anyhow::ensure!(tz.max >= tz.min, "tz MAX must be >= MIN");

        let max_tz = svr_core::sampler::max_abs_tz(volume.side_mm().x);
        if tz.min.abs() > max_tz || tz.max.abs() > max_tz {
            eprintln!(
                "warning: tz range [{}, {}) exceeds the central-70% bound ±{:.1} mm; \
                 edge slices will be content-filtered",
                tz.min, tz.max, max_tz
            );
        }

        Ok(SamplingConfig {
            scheme,
            tz,
            seed,
            slice_px: self.slice_px.unwrap_or(volume.nx),
            slice_spacing: self.slice_spacing.unwrap_or(volume.spacing),
            anchor_scale: self.anchor_scale,
            min_content: self.min_content,
        })
    }
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct GenDatasetArgs {
    /// Input SPV1 volume (normalized atlas or phantom).
    #[arg(long)]
    pub volume: PathBuf,
    /// Output dataset directory (slices + manifest.jsonl).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityArg {
    Cc,
    Ssim,
}

impl From<SimilarityArg> for Similarity {
    fn from(s: SimilarityArg) -> Self {
        match s {
            SimilarityArg::Cc => Similarity::Cc,
            SimilarityArg::Ssim => Similarity::Ssim,
        }
    }
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct BuildDictArgs {
    /// Input SPV1 atlas volume.
    #[arg(long)]
    pub volume: PathBuf,
    /// Output dictionary path.
    #[arg(long)]
    pub out: PathBuf,
    /// Descriptor side (pixels).
    #[arg(long, default_value_t = 32)]
    pub descriptor_size: usize,
    /// Similarity used for matching.
    #[arg(long, value_enum, default_value = "cc")]
    #[serde(default = "default_similarity")]
    pub similarity: SimilarityArg,
    #[command(flatten)]
    #[serde(flatten)]
    pub sampling: SamplingArgs,
}

fn default_similarity() -> SimilarityArg {
    SimilarityArg::Cc
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct PredictArgs {
    /// Dictionary model file from `build-dict`.
    #[arg(long)]
    pub model: PathBuf,
    /// Input manifest (JSON lines); slice paths resolve relative to it.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output JSON-lines path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Monte-Carlo samples per slice.
    #[arg(long, default_value_t = 100)]
    pub mc_samples: usize,
    /// Geodesic-variance acceptance threshold (metric units).
    #[arg(long, default_value_t = 10.0)]
    pub variance_threshold: f64,
    /// Single deterministic prediction per slice instead of Monte Carlo.
    #[arg(long)]
    #[serde(default)]
    pub deterministic: bool,
    /// Rotation weight of the geodesic metric (per radian^2).
    #[arg(long, default_value_t = 1.0)]
    pub w_rot: f64,
    /// Translation weight of the geodesic metric (per mm^2).
    #[arg(long, default_value_t = 1.0)]
    pub w_trans: f64,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Predicted poses (JSON lines with id/quaternion/anchors).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth manifest (JSON lines).
    #[arg(long)]
    pub gt: PathBuf,
    /// Reference volume; enables image metrics by re-extracting each slice
    /// at its predicted pose.
    #[arg(long)]
    pub volume: Option<PathBuf>,
    /// Output JSON-lines path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Peak intensity for PSNR/SSIM (intensity units).
    #[arg(long, default_value_t = 255.0)]
    pub max_i: f64,
    /// Rotation weight of the geodesic metric (per radian^2).
    #[arg(long, default_value_t = 1.0)]
    pub w_rot: f64,
    /// Translation weight of the geodesic metric (per mm^2).
    #[arg(long, default_value_t = 1.0)]
    pub w_trans: f64,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct ReconstructArgs {
    /// Slices + poses: a dataset manifest or `predict` output (JSON lines).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Reconstruction grid side (voxels).
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    /// Reconstruction voxel spacing (mm).
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    /// Slice thickness for the PSF (mm, FWHM through-plane).
    #[arg(long, default_value_t = 2.0)]
    pub psf_thickness: f64,
    /// SVR refinement rounds (0 = Gaussian average only).
    #[arg(long, default_value_t = 0)]
    pub iters: usize,
    /// Registration search step: rotation (degrees).
    #[arg(long, default_value_t = 12.0)]
    pub search_rot: f64,
    /// Registration search step: translation (mm).
    #[arg(long, default_value_t = 5.0)]
    pub search_trans: f64,
    /// Use only rows flagged accepted=true (confidence filtering).
    #[arg(long)]
    #[serde(default)]
    pub accepted_only: bool,
    /// Output SPV1 volume path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional SPV1 u8 coverage-mask output path.
    #[arg(long)]
    pub coverage_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Saved run configuration (JSON from --save-config).
    #[arg(long)]
    pub config: PathBuf,
}

/// Serializable record of a resolved invocation.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub threads: usize,
    pub seed: u64,
    pub verbose: u8,
    #[serde(flatten)]
    pub command: Command,
}
