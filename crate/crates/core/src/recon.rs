//! Slice-to-volume reconstruction.
//!
//! The forward model samples a slice through a Gaussian PSF (3-point Gauss
//! quadrature through-plane plus an in-plane pre-blur). Reconstruction
//! starts from a Gaussian-average splat of all slices at their poses and
//! optionally alternates per-slice rigid re-registration with volume
//! re-splatting (SVR refinement). Splatting merges fixed-size chunks in
//! deterministic order, so results are byte-identical for any thread count.

use crate::lie::{mad_outlier_mask, MAD_SCALE_NORMAL};
use crate::metrics::cross_correlation;
use crate::se3::{rotation_from_euler, RigidTransform};
use crate::volume::{extract_slice, SliceImage, Volume};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// FWHM of a Gaussian in units of sigma: `2 sqrt(2 ln 2)`.
pub const FWHM_TO_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Gaussian point-spread function of the acquisition, in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psf {
    pub sigma_inplane: f64,
    pub sigma_through: f64,
}

impl Psf {
    /// PSF with FWHM equal to the pixel spacing in-plane and the slice
    /// thickness through-plane.
    pub fn from_spacings(pixel_spacing: f64, slice_thickness: f64) -> Self {
        Psf {
            sigma_inplane: pixel_spacing / FWHM_TO_SIGMA,
            sigma_through: slice_thickness / FWHM_TO_SIGMA,
        }
    }
}

/// Reconstruction grid, PSF and SVR settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub spacing: f64,
    pub psf: Psf,
    /// 0 = Gaussian average only.
    pub svr_iterations: usize,
    /// Initial per-coordinate rotation search step (radians).
    pub search_rot: f64,
    /// Initial per-coordinate translation search step (mm).
    pub search_trans: f64,
    /// Coverage threshold as a fraction of the peak single-pixel weight.
    pub w_min: f64,
}

impl ReconConfig {
    pub fn for_cube(n: usize, spacing: f64, slice_thickness: f64) -> Self {
        ReconConfig {
            nx: n,
            ny: n,
            nz: n,
            spacing,
            psf: Psf::from_spacings(spacing, slice_thickness),
            svr_iterations: 0,
            search_rot: 0.2,
            search_trans: 4.0,
            w_min: 0.01,
        }
    }
}

#[derive(Debug, Error)]
pub enum ReconError {
    #[error("no slices to reconstruct from")]
    NoSlices,
    #[error("slice and pose counts differ ({0} vs {1})")]
    CountMismatch(usize, usize),
}

/// Gauss-Hermite 3-point rule for a unit-sigma Gaussian weight:
/// nodes at 0 and +-sqrt(3), weights 2/3 and 1/6.
const QUAD_OFFSETS: [f64; 3] = [-1.732_050_807_568_877_2, 0.0, 1.732_050_807_568_877_2];
const QUAD_WEIGHTS: [f64; 3] = [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0];

/// Separable in-plane Gaussian blur with edge renormalization (constant
/// images stay constant). A vanishing sigma degrades to the identity.
fn gaussian_blur_inplane(img: &SliceImage, sigma_px: f64) -> SliceImage {
    let radius = (3.0 * sigma_px).ceil() as i64;
    if radius < 1 || sigma_px <= 0.0 {
        return img.clone();
    }
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-0.5 * (d as f64 / sigma_px).powi(2)).exp())
        .collect();
    let l = img.l as i64;

    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut dst = vec![0.0; (l * l) as usize];
        for j in 0..l {
            for i in 0..l {
                let mut acc = 0.0;
                let mut wsum = 0.0;
                for (ki, w) in kernel.iter().enumerate() {
                    let d = ki as i64 - radius;
                    let (si, sj) = if horizontal { (i + d, j) } else { (i, j + d) };
                    if si < 0 || si >= l || sj < 0 || sj >= l {
                        continue;
                    }
                    acc += w * src[(si + l * sj) as usize];
                    wsum += w;
                }
                dst[(i + l * j) as usize] = acc / wsum;
            }
        }
        dst
    };

    let h = pass(&img.pixels, true);
    SliceImage::new(img.l, img.spacing, pass(&h, false))
}

/// Acquire a slice through the PSF: each pixel integrates the volume against
/// a Gaussian centered at its world point (3-point quadrature along the
/// plane normal), then the image is blurred in-plane.
pub fn forward_project(
    v: &Volume,
    t: &RigidTransform,
    l: usize,
    spacing: f64,
    psf: &Psf,
) -> SliceImage {
    let normal = t.rotation * Vector3::z();
    let mut img = SliceImage::zeros(l, spacing);
    for j in 0..l {
        for i in 0..l {
            let (u, w) = img.pixel_to_plane(i as f64, j as f64);
            let base = t.apply(&Vector3::new(u, w, 0.0));
            let mut acc = 0.0;
            for q in 0..3 {
                let p = base + normal * (QUAD_OFFSETS[q] * psf.sigma_through);
                acc += QUAD_WEIGHTS[q] * crate::volume::trilinear_sample(v, &p);
            }
            img.set(i, j, acc);
        }
    }
    gaussian_blur_inplane(&img, psf.sigma_inplane / spacing)
}

/// Gaussian-average reconstruction output.
#[derive(Debug, Clone)]
pub struct SplatResult {
    pub volume: Volume,
    /// Per-voxel flag: accumulated weight reached the coverage threshold.
    pub coverage: Vec<bool>,
}

impl SplatResult {
    /// Coverage mask as a u8 volume (1 = covered), for file export.
    pub fn coverage_volume(&self) -> Volume {
        let mut v = Volume::new(
            self.volume.nx,
            self.volume.ny,
            self.volume.nz,
            self.volume.spacing,
            self.coverage.iter().map(|c| if *c { 1.0 } else { 0.0 }).collect(),
        );
        v.dtype = crate::volume::Dtype::U8;
        v
    }
}

/// Slices per deterministic accumulation chunk. Fixed (not thread-derived)
/// so partial sums merge in the same order regardless of parallelism.
const SPLAT_CHUNK: usize = 16;
/// Gaussian support cutoff at 3 sigma.
const SPLAT_CUTOFF_SIGMAS: f64 = 3.0;

struct Accumulator {
    wsum: Vec<f64>,
    wval: Vec<f64>,
}

fn splat_chunk(
    slices: &[(&SliceImage, &RigidTransform)],
    grid: &Volume,
    psf: &Psf,
) -> Accumulator {
    let n = grid.len();
    let mut acc = Accumulator {
        wsum: vec![0.0; n],
        wval: vec![0.0; n],
    };
    let inv2_si = 0.5 / (psf.sigma_inplane * psf.sigma_inplane);
    let inv2_st = 0.5 / (psf.sigma_through * psf.sigma_through);
    let r_mm = SPLAT_CUTOFF_SIGMAS * psf.sigma_inplane.max(psf.sigma_through);
    let r_vox = r_mm / grid.spacing;
    let min_w = (-0.5 * SPLAT_CUTOFF_SIGMAS * SPLAT_CUTOFF_SIGMAS).exp();

    for (img, pose) in slices {
        let rot_t = pose.rotation.transpose();
        for pj in 0..img.l {
            for pi in 0..img.l {
                let value = img.get(pi, pj);
                let (u, w) = img.pixel_to_plane(pi as f64, pj as f64);
                let p = pose.apply(&Vector3::new(u, w, 0.0));
                let (vx, vy, vz) = grid.world_to_voxel(&p);

                let lo = |c: f64| (c - r_vox).ceil().max(0.0) as usize;
                let hi = |c: f64, n: usize| (c + r_vox).floor().min(n as f64 - 1.0);
                if hi(vx, grid.nx) < 0.0 || hi(vy, grid.ny) < 0.0 || hi(vz, grid.nz) < 0.0 {
                    continue;
                }
                let (i0, i1) = (lo(vx), hi(vx, grid.nx) as usize);
                let (j0, j1) = (lo(vy), hi(vy, grid.ny) as usize);
                let (k0, k1) = (lo(vz), hi(vz, grid.nz) as usize);

                for k in k0..=k1 {
                    for j in j0..=j1 {
                        for i in i0..=i1 {
                            let d = grid.voxel_to_world(i as f64, j as f64, k as f64) - p;
                            let ds = rot_t * d;
                            let e = (ds.x * ds.x + ds.y * ds.y) * inv2_si + ds.z * ds.z * inv2_st;
                            let weight = (-e).exp();
                            if weight < min_w {
                                continue;
                            }
                            let idx = i + grid.nx * (j + grid.ny * k);
                            acc.wsum[idx] += weight;
                            acc.wval[idx] += weight * value;
                        }
                    }
                }
            }
        }
    }
    acc
}

/// Scattered-data Gaussian average: each voxel takes the PSF-weighted mean
/// of nearby slice pixels; voxels whose accumulated weight stays below
/// `w_min` (relative to the unit peak weight) are left empty.
pub fn splat_gaussian(
    slices: &[(SliceImage, RigidTransform)],
    cfg: &ReconConfig,
) -> Result<SplatResult, ReconError> {
    if slices.is_empty() {
        return Err(ReconError::NoSlices);
    }
    let grid = Volume::zeros(cfg.nx, cfg.ny, cfg.nz, cfg.spacing);
    let refs: Vec<(&SliceImage, &RigidTransform)> =
        slices.iter().map(|(s, t)| (s, t)).collect();

    let partials: Vec<Accumulator> = refs
        .par_chunks(SPLAT_CHUNK)
        .map(|chunk| splat_chunk(chunk, &grid, &cfg.psf))
        .collect();

    let n = grid.len();
    let mut wsum = vec![0.0; n];
    let mut wval = vec![0.0; n];
    for acc in &partials {
        for idx in 0..n {
            wsum[idx] += acc.wsum[idx];
            wval[idx] += acc.wval[idx];
        }
    }

    let mut volume = grid;
    let mut coverage = vec![false; n];
    for idx in 0..n {
        if wsum[idx] >= cfg.w_min {
            coverage[idx] = true;
            volume.data_mut()[idx] = wval[idx] / wsum[idx];
        }
    }
    Ok(SplatResult { volume, coverage })
}

/// Outcome of one slice registration.
#[derive(Debug, Clone, Copy)]
pub struct RegReport {
    /// CC against the target at the returned pose; `None` when undefined.
    pub cc: Option<f64>,
    pub no_overlap: bool,
}

fn perturbation(coord: usize, step: f64) -> RigidTransform {
    let mut angles = [0.0; 3];
    let mut trans = Vector3::zeros();
    if coord < 3 {
        angles[coord] = step;
    } else {
        trans[coord - 3] = step;
    }
    RigidTransform::new(rotation_from_euler(angles[0], angles[1], angles[2]), trans)
}

/// Local CC maximization over the 6-DoF neighborhood of `init` by shrinking
/// coordinate descent (3 passes, step halved per pass; perturbations compose
/// in the slice frame). The returned pose never scores below `init`. When no
/// candidate produces a comparable image (no overlap with the volume), the
/// initial pose comes back unchanged with the `no_overlap` flag set.
pub fn register_slice_to_volume(
    img: &SliceImage,
    init: &RigidTransform,
    v: &Volume,
    cfg: &ReconConfig,
) -> (RigidTransform, RegReport) {
    let score = |t: &RigidTransform| -> Option<f64> {
        let projected = forward_project(v, t, img.l, img.spacing, &cfg.psf);
        cross_correlation(img, &projected).ok()
    };

    let mut best_pose = *init;
    let mut best = score(init);
    let mut any_valid = best.is_some();

    for pass in 0..3 {
        let shrink = 0.5f64.powi(pass);
        let steps = [
            cfg.search_rot * shrink,
            cfg.search_rot * shrink,
            cfg.search_rot * shrink,
            cfg.search_trans * shrink,
            cfg.search_trans * shrink,
            cfg.search_trans * shrink,
        ];
        for _sweep in 0..4 {
            let mut improved = false;
            for coord in 0..6 {
                for dir in [1.0, -1.0] {
                    // Hill-climb in this direction while it keeps improving.
                    for _ in 0..16 {
                        let cand = best_pose.compose(&perturbation(coord, dir * steps[coord]));
                        let s = score(&cand);
                        if s.is_some() {
                            any_valid = true;
                        }
                        match (s, best) {
                            (Some(sc), Some(bc)) if sc > bc => {
                                best = Some(sc);
                                best_pose = cand;
                                improved = true;
                            }
                            (Some(sc), None) => {
                                best = Some(sc);
                                best_pose = cand;
                                improved = true;
                            }
                            _ => break,
                        }
                    }
                }
            }
            if !improved {
                break;
            }
        }
    }

    let no_overlap = !any_valid;
    if no_overlap {
        return (
            *init,
            RegReport {
                cc: None,
                no_overlap: true,
            },
        );
    }
    (
        best_pose,
        RegReport {
            cc: best,
            no_overlap: false,
        },
    )
}

/// SVR refinement output.
#[derive(Debug, Clone)]
pub struct SvrResult {
    pub volume: Volume,
    pub coverage: Vec<bool>,
    pub poses: Vec<RigidTransform>,
    /// Per-slice inlier flags from the robust CC rejection of the last round.
    pub inliers: Vec<bool>,
    /// Mean slice CC against that round's target volume, per round.
    pub round_mean_cc: Vec<f64>,
}

/// Alternate Gaussian-average re-splatting with per-slice re-registration.
///
/// Each round rebuilds the target from the current inlier poses, re-registers
/// every slice against it (never decreasing the slice's own CC), then drops
/// slices whose CC falls more than three scaled MADs below the median from
/// the next splat. With `svr_iterations = 0` this is exactly
/// [`splat_gaussian`].
pub fn svr_refine(
    slices: &[SliceImage],
    init_poses: &[RigidTransform],
    cfg: &ReconConfig,
) -> Result<SvrResult, ReconError> {
    if slices.is_empty() {
        return Err(ReconError::NoSlices);
    }
    if slices.len() != init_poses.len() {
        return Err(ReconError::CountMismatch(slices.len(), init_poses.len()));
    }

    let mut poses = init_poses.to_vec();
    let mut inliers = vec![true; slices.len()];
    let mut round_mean_cc = Vec::new();

    for _round in 0..cfg.svr_iterations {
        let kept: Vec<(SliceImage, RigidTransform)> = slices
            .iter()
            .zip(&poses)
            .zip(&inliers)
            .filter(|(_, keep)| **keep)
            .map(|((s, p), _)| (s.clone(), *p))
            .collect();
        let target = splat_gaussian(&kept, cfg)?.volume;

        let results: Vec<(RigidTransform, RegReport)> = slices
            .par_iter()
            .zip(&poses)
            .map(|(img, pose)| register_slice_to_volume(img, pose, &target, cfg))
            .collect();

        poses = results.iter().map(|(p, _)| *p).collect();
        let ccs: Vec<Option<f64>> = results.iter().map(|(_, r)| r.cc).collect();

        let valid: Vec<f64> = ccs.iter().flatten().copied().collect();
        if !valid.is_empty() {
            round_mean_cc.push(valid.iter().sum::<f64>() / valid.len() as f64);
            let median = crate::lie::median(&valid);
            let low_mask = mad_outlier_mask(&valid, MAD_SCALE_NORMAL, 3.0);
            let mut vi = 0;
            for (idx, cc) in ccs.iter().enumerate() {
                inliers[idx] = match cc {
                    Some(c) => {
                        let flagged = low_mask[vi] && *c < median;
                        vi += 1;
                        !flagged
                    }
                    None => false,
                };
            }
            // Never reject everything.
            if inliers.iter().all(|k| !k) {
                inliers = vec![true; slices.len()];
            }
        }
    }

    let kept: Vec<(SliceImage, RigidTransform)> = slices
        .iter()
        .zip(&poses)
        .zip(&inliers)
        .filter(|(_, keep)| **keep)
        .map(|((s, p), _)| (s.clone(), *p))
        .collect();
    let splat = splat_gaussian(&kept, cfg)?;
    Ok(SvrResult {
        volume: splat.volume,
        coverage: splat.coverage,
        poses,
        inliers,
        round_mean_cc,
    })
}

/// Nominal stack geometry for the synthetic corruptor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackSpec {
    /// Stacks cycle through axial, coronal and sagittal orientations.
    pub n_stacks: usize,
    pub slices_per_stack: usize,
    pub slice_px: usize,
    pub slice_spacing: f64,
    /// Distance between adjacent slices along the stack normal (mm).
    pub slice_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum MotionMode {
    /// Independent random perturbation per slice.
    Independent,
    /// Smooth sinusoidal motion along each stack (a slowly turning subject).
    Smooth { cycles: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    /// Per-axis rotation bound (radians).
    pub max_rotation: f64,
    /// Per-axis translation bound (mm).
    pub max_translation: f64,
    pub mode: MotionMode,
}

fn stack_orientation(k: usize) -> RigidTransform {
    match k % 3 {
        0 => RigidTransform::identity(),
        1 => RigidTransform::new(
            rotation_from_euler(std::f64::consts::FRAC_PI_2, 0.0, 0.0),
            Vector3::zeros(),
        ),
        _ => RigidTransform::new(
            rotation_from_euler(0.0, std::f64::consts::FRAC_PI_2, 0.0),
            Vector3::zeros(),
        ),
    }
}

fn bounded_rigid(rng: &mut impl Rng, max_rot: f64, max_trans: f64) -> RigidTransform {
    let mut sample = |b: f64| -> f64 {
        if b > 0.0 {
            rng.random_range(-b..=b)
        } else {
            0.0
        }
    };
    let (rx, ry, rz) = (sample(max_rot), sample(max_rot), sample(max_rot));
    let t = Vector3::new(sample(max_trans), sample(max_trans), sample(max_trans));
    RigidTransform::new(rotation_from_euler(rx, ry, rz), t)
}

fn gaussian_sample(rng: &mut impl Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos()
}

/// Extract motion-corrupted stacks with known ground-truth poses.
///
/// The returned pose of each slice is its true extraction pose (nominal
/// stack geometry composed with the sampled motion); reconstruction from
/// these pairs recovers the volume. Deterministic for a fixed seed; all
/// perturbation components stay within the configured bounds.
pub fn corrupt_stacks(
    v: &Volume,
    stack: &StackSpec,
    motion: &MotionSpec,
    noise_sigma: f64,
    seed: u64,
) -> Vec<(SliceImage, RigidTransform)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(stack.n_stacks * stack.slices_per_stack);
    let n = stack.slices_per_stack;

    for k in 0..stack.n_stacks {
        let base = stack_orientation(k);
        // Smooth mode: one bounded motion extreme per stack, modulated along it.
        let (extreme, phase) = match motion.mode {
            MotionMode::Smooth { .. } => (
                bounded_rigid(&mut rng, motion.max_rotation, motion.max_translation),
                rng.random_range(0.0..std::f64::consts::TAU),
            ),
            MotionMode::Independent => (RigidTransform::identity(), 0.0),
        };

        for s in 0..n {
            let offset = (s as f64 - 0.5 * (n as f64 - 1.0)) * stack.slice_gap;
            let normal = base.rotation * Vector3::z();
            let nominal = RigidTransform::new(base.rotation, normal * offset);

            let delta = match motion.mode {
                MotionMode::Independent => {
                    bounded_rigid(&mut rng, motion.max_rotation, motion.max_translation)
                }
                MotionMode::Smooth { cycles } => {
                    let amp = (std::f64::consts::TAU * cycles * s as f64 / n.max(1) as f64
                        + phase)
                        .sin();
                    let twist = crate::lie::se3_log(&extreme);
                    crate::lie::se3_exp(&twist.scale(amp))
                }
            };

            let pose = delta.compose(&nominal);
            let mut img = extract_slice(v, &pose, stack.slice_px, stack.slice_spacing);
            if noise_sigma > 0.0 {
                for p in img.pixels.iter_mut() {
                    *p += noise_sigma * gaussian_sample(&mut rng);
                }
            }
            out.push((img, pose));
        }
    }
    out
}

/// Apply independent bounded rigid perturbations to a pose list (simulated
/// initialization error). Deterministic for a fixed seed.
pub fn perturb_poses(
    poses: &[RigidTransform],
    max_rot: f64,
    max_trans: f64,
    seed: u64,
) -> Vec<RigidTransform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    poses
        .iter()
        .map(|p| p.compose(&bounded_rigid(&mut rng, max_rot, max_trans)))
        .collect()
}

/// PSNR between two volumes over a voxel mask. `None` when the mask is empty
/// or the masked regions are identical (infinite PSNR).
pub fn psnr_over_mask(a: &Volume, b: &Volume, mask: &[bool], max_i: f64) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    assert_eq!(a.len(), mask.len());
    let mut sum = 0.0;
    let mut n = 0usize;
    for idx in 0..mask.len() {
        if mask[idx] {
            let d = a.data()[idx] - b.data()[idx];
            sum += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return None;
    }
    let mse = sum / n as f64;
    if mse == 0.0 {
        return None;
    }
    Some(10.0 * (max_i * max_i / mse).log10())
}
