//! Pose sampling schemes and slice-dataset materialization.
//!
//! Poses vary four parameters (Rx, Ry, Rz and a shift Tz along the rotated
//! plane normal); Tx/Ty are fixed by the centered-RoI convention. Four
//! schemes are provided: an Euler-angle grid, a uniform polar grid (kept for
//! the density comparison), Fibonacci sphere sampling, and seeded random
//! validation poses. Datasets pair each extracted slice with ground-truth
//! labels in all three parameterizations.

use crate::se3::{
    anchor_points_from_transform, rotation_between_vectors, rotation_from_euler, AnchorPoints,
    EulerCartesian, QuaternionCartesian, RigidTransform,
};
use crate::spv::{self, SpvError};
use crate::volume::{extract_slice, Dtype, SliceImage, Volume};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Largest |Tz| that keeps the sampling plane inside the central 70% of a
/// volume with the given physical side (mm).
pub fn max_abs_tz(volume_side_mm: f64) -> f64 {
    0.35 * volume_side_mm
}

/// Half-open Tz grid: `min + k * step` for `k` in `0..n` with
/// `n = ceil((max - min) / step)`, and a single value when `min == max`.
///
/// The half-open convention is what makes the documented pose counts come
/// out: 40 offsets for -40..+40 at 2 mm and 20 at 4 mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TzRange {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl TzRange {
    pub fn single(tz: f64) -> Self {
        TzRange {
            min: tz,
            max: tz,
            step: 1.0,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        assert!(self.step > 0.0, "tz step must be positive");
        assert!(self.max >= self.min, "tz range must be ordered");
        let n = (((self.max - self.min) / self.step) - 1e-9).ceil().max(0.0) as usize;
        let n = n.max(1);
        (0..n).map(|k| self.min + k as f64 * self.step).collect()
    }
}

/// Scheme-specific sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum SchemeParams {
    /// Cartesian product of three extrinsic-XYZ angle grids over (-pi/2, pi/2].
    EulerGrid { angle_step: f64 },
    /// Plain (phi, theta) grid; denser near the poles, kept for comparison.
    UniformPolar {
        n_phi: usize,
        n_theta: usize,
        n_inplane: usize,
    },
    /// Fibonacci sphere normals with uniform in-plane rotations.
    Fibonacci { n_normals: usize, n_inplane: usize },
    /// Seeded random normals/in-plane angles/Tz within the training bounds.
    Random { count: usize },
}

/// Full sampling configuration for dataset generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    #[serde(flatten)]
    pub scheme: SchemeParams,
    pub tz: TzRange,
    pub seed: u64,
    /// Slice side in pixels.
    pub slice_px: usize,
    /// Slice pixel spacing in mm.
    pub slice_spacing: f64,
    /// Identity-plane anchor half-size; defaults to `slice_px` (the label is
    /// a pose encoding, recovery is invariant to the triangle scale).
    pub anchor_scale: Option<f64>,
    /// Minimum nonzero-pixel fraction for a slice to enter the dataset.
    pub min_content: f64,
}

impl SamplingConfig {
    /// Config with slice geometry matching the volume's axial faces.
    pub fn for_volume(scheme: SchemeParams, tz: TzRange, v: &Volume, seed: u64) -> Self {
        SamplingConfig {
            scheme,
            tz,
            seed,
            slice_px: v.nx,
            slice_spacing: v.spacing,
            anchor_scale: None,
            min_content: 0.05,
        }
    }

    pub fn anchor_scale(&self) -> f64 {
        self.anchor_scale.unwrap_or(self.slice_px as f64)
    }

    /// All poses of this configuration, in stable id order.
    pub fn transforms(&self) -> Vec<RigidTransform> {
        match &self.scheme {
            SchemeParams::EulerGrid { angle_step } => euler_grid_transforms(*angle_step, &self.tz),
            SchemeParams::UniformPolar {
                n_phi,
                n_theta,
                n_inplane,
            } => uniform_polar_transforms(*n_phi, *n_theta, *n_inplane, &self.tz),
            SchemeParams::Fibonacci {
                n_normals,
                n_inplane,
            } => fibonacci_transforms(*n_normals, *n_inplane, &self.tz),
            SchemeParams::Random { count } => {
                random_validation_transforms(*count, &self.tz, self.seed)
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Spv(#[from] SpvError),
    #[error("no slice passed the content filter (min_content = {0})")]
    EmptyResult(f64),
}

/// Pose plus normal-alignment helper: shift `tz` along the rotated plane normal.
fn pose_with_tz(rotation: nalgebra::Matrix3<f64>, tz: f64) -> RigidTransform {
    let normal = rotation * Vector3::z();
    RigidTransform::new(rotation, normal * tz)
}

/// Euler-grid poses: each angle iterates `-pi/2 + k*step` for `k = 1..=n`
/// with `n = pi / step` (the step must divide the range evenly), crossed
/// with the Tz grid. Count is `n^3 * n_tz`.
pub fn euler_grid_transforms(angle_step: f64, tz: &TzRange) -> Vec<RigidTransform> {
    assert!(angle_step > 0.0, "angle step must be positive");
    let n = (std::f64::consts::PI / angle_step).round() as usize;
    assert!(
        (n as f64 * angle_step - std::f64::consts::PI).abs() < 1e-9,
        "angle step must divide the (-pi/2, pi/2] range evenly"
    );
    let angles: Vec<f64> = (1..=n)
        .map(|k| -std::f64::consts::FRAC_PI_2 + k as f64 * angle_step)
        .collect();
    let tz_values = tz.values();

    let mut out = Vec::with_capacity(n * n * n * tz_values.len());
    for rx in &angles {
        for ry in &angles {
            for rz in &angles {
                let rot = rotation_from_euler(*rx, *ry, *rz);
                for t in &tz_values {
                    out.push(pose_with_tz(rot, *t));
                }
            }
        }
    }
    out
}

/// Fibonacci sphere normals: `z_i = 1 - (2i + 1)/n`, azimuth `2*pi*i/phi`
/// with `phi` the golden ratio. Quasi-uniform angular separation.
pub fn fibonacci_normals(n: usize) -> Vec<Vector3<f64>> {
    assert!(n >= 1);
    let golden = (5f64.sqrt() + 1.0) / 2.0;
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let phi = std::f64::consts::TAU * i as f64 / golden;
            let r = (1.0 - z * z).max(0.0).sqrt();
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Plain polar grid of `n_phi * n_theta` normals. Polar angles avoid the
/// poles (`theta = pi * (k+1) / (n_theta+1)`) so normals stay distinct.
pub fn uniform_polar_normals(n_phi: usize, n_theta: usize) -> Vec<Vector3<f64>> {
    assert!(n_phi >= 1 && n_theta >= 1);
    let mut out = Vec::with_capacity(n_phi * n_theta);
    for k in 0..n_theta {
        let theta = std::f64::consts::PI * (k as f64 + 1.0) / (n_theta as f64 + 1.0);
        for j in 0..n_phi {
            let phi = std::f64::consts::TAU * j as f64 / n_phi as f64;
            out.push(Vector3::new(
                theta.sin() * phi.cos(),
                theta.sin() * phi.sin(),
                theta.cos(),
            ));
        }
    }
    out
}

/// Poses for a set of plane normals: align +z onto the normal, pre-rotate
/// in-plane by `k * pi / n_inplane` (angles in `[0, pi)`), shift along the
/// normal by each Tz value. Count is `normals * n_inplane * n_tz`.
fn transforms_for_normals(
    normals: &[Vector3<f64>],
    n_inplane: usize,
    tz: &TzRange,
) -> Vec<RigidTransform> {
    assert!(n_inplane >= 1);
    let tz_values = tz.values();
    let z = Vector3::z();
    let mut out = Vec::with_capacity(normals.len() * n_inplane * tz_values.len());
    for normal in normals {
        let align = rotation_between_vectors(&z, normal);
        for k in 0..n_inplane {
            let alpha = std::f64::consts::PI * k as f64 / n_inplane as f64;
            let rot = align * rotation_from_euler(0.0, 0.0, alpha);
            for t in &tz_values {
                out.push(pose_with_tz(rot, *t));
            }
        }
    }
    out
}

pub fn fibonacci_transforms(n_normals: usize, n_inplane: usize, tz: &TzRange) -> Vec<RigidTransform> {
    transforms_for_normals(&fibonacci_normals(n_normals), n_inplane, tz)
}

pub fn uniform_polar_transforms(
    n_phi: usize,
    n_theta: usize,
    n_inplane: usize,
    tz: &TzRange,
) -> Vec<RigidTransform> {
    transforms_for_normals(&uniform_polar_normals(n_phi, n_theta), n_inplane, tz)
}

/// Random validation poses: normals uniform on the sphere (uniform z and
/// azimuth), in-plane rotation uniform in `[0, pi)`, Tz uniform in the
/// configured bounds. Deterministic for a fixed seed.
pub fn random_validation_transforms(n: usize, tz: &TzRange, seed: u64) -> Vec<RigidTransform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z_axis = Vector3::z();
    (0..n)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..=1.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).max(0.0).sqrt();
            let normal = Vector3::new(r * phi.cos(), r * phi.sin(), z);
            let alpha: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let t: f64 = if tz.max > tz.min {
                rng.random_range(tz.min..tz.max)
            } else {
                tz.min
            };
            let rot = rotation_between_vectors(&z_axis, &normal)
                * rotation_from_euler(0.0, 0.0, alpha);
            pose_with_tz(rot, t)
        })
        .collect()
}

/// One extracted slice with ground-truth labels in all three encodings.
#[derive(Debug, Clone)]
pub struct SliceSample {
    pub id: String,
    pub image: SliceImage,
    pub transform: RigidTransform,
    pub euler: EulerCartesian,
    pub quaternion: QuaternionCartesian,
    pub anchors: AnchorPoints,
    pub content_fraction: f64,
}

impl SliceSample {
    pub fn from_pose(id: String, image: SliceImage, t: RigidTransform, anchor_scale: f64) -> Self {
        let content_fraction = image.content_fraction();
        SliceSample {
            id,
            image,
            euler: t.to_euler(),
            quaternion: t.to_quaternion(),
            anchors: anchor_points_from_transform(&t, anchor_scale),
            transform: t,
            content_fraction,
        }
    }
}

/// Anchor triple as plain arrays for the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorArrays {
    pub p1: [f64; 3],
    pub p2: [f64; 3],
    pub p3: [f64; 3],
}

impl From<AnchorPoints> for AnchorArrays {
    fn from(a: AnchorPoints) -> Self {
        let [p1, p2, p3] = a.as_arrays();
        AnchorArrays { p1, p2, p3 }
    }
}

impl From<AnchorArrays> for AnchorPoints {
    fn from(a: AnchorArrays) -> Self {
        AnchorPoints::from_arrays([a.p1, a.p2, a.p3])
    }
}

/// One JSON-lines manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    /// Slice file path relative to the manifest directory.
    pub file: String,
    pub euler: EulerCartesian,
    pub quaternion: QuaternionCartesian,
    pub anchors: AnchorArrays,
    pub content_fraction: f64,
}

impl ManifestRow {
    /// The pose encoded by this row (from the quaternion encoding).
    pub fn transform(&self) -> RigidTransform {
        RigidTransform::from_quaternion(&self.quaternion)
    }
}

/// Extract, filter and write a slice dataset; returns the manifest rows.
///
/// One SPV1 slice file is written per content-bearing pose plus a
/// `manifest.jsonl` with labels in all three encodings. Ids number the
/// unfiltered pose list, so they are stable under content filtering.
/// Extraction runs in parallel; rows are emitted in id order, making the
/// output byte-identical regardless of thread count.
pub fn generate_dataset(
    v: &Volume,
    cfg: &SamplingConfig,
    out_dir: &Path,
) -> Result<Vec<ManifestRow>, SamplerError> {
    fs::create_dir_all(out_dir)?;
    let transforms = cfg.transforms();
    let anchor_scale = cfg.anchor_scale();

    let samples: Vec<Option<(ManifestRow, SliceImage)>> = transforms
        .par_iter()
        .enumerate()
        .map(|(idx, t)| {
            let image = extract_slice(v, t, cfg.slice_px, cfg.slice_spacing);
            if image.content_fraction() < cfg.min_content {
                return None;
            }
            let sample = SliceSample::from_pose(format!("slice_{idx:06}"), image, *t, anchor_scale);
            let row = ManifestRow {
                file: format!("{}.spv", sample.id),
                id: sample.id,
                euler: sample.euler,
                quaternion: sample.quaternion,
                anchors: sample.anchors.into(),
                content_fraction: sample.content_fraction,
            };
            Some((row, sample.image))
        })
        .collect();

    let kept: Vec<&(ManifestRow, SliceImage)> = samples.iter().flatten().collect();
    if kept.is_empty() {
        return Err(SamplerError::EmptyResult(cfg.min_content));
    }

    kept.par_iter()
        .map(|(row, image)| spv::save_slice(image, &out_dir.join(&row.file), Dtype::F32))
        .collect::<Result<Vec<_>, _>>()?;

    let mut manifest = fs::File::create(out_dir.join("manifest.jsonl"))?;
    for (row, _) in &kept {
        serde_json::to_writer(&mut manifest, row).expect("manifest row serialization");
        manifest.write_all(b"\n")?;
    }

    Ok(kept.iter().map(|(row, _)| row.clone()).collect())
}

/// Read a JSON-lines manifest.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, SamplerError> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow = serde_json::from_str(line)
            .map_err(|e| SamplerError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
        rows.push(row);
    }
    Ok(rows)
}
