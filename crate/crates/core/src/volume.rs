//! 3D scalar volumes with isotropic spacing and center-anchored world
//! coordinates, plus oblique slice extraction and intensity pre-processing.
//!
//! The world origin sits at the grid center, so all pose rotations pivot
//! about the volume center. Sampling outside the grid reads as background 0,
//! matching the masked-RoI-on-black convention used throughout the pipeline.

use crate::se3::RigidTransform;
use nalgebra::Vector3;
use thiserror::Error;

/// On-disk scalar type of a volume payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U8,
    F32,
}

impl Dtype {
    pub fn name(&self) -> &'static str {
        match self {
            Dtype::U8 => "u8",
            Dtype::F32 => "f32",
        }
    }

    pub fn byte_size(&self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::F32 => 4,
        }
    }
}

/// 3D scalar grid with isotropic spacing (mm) and origin at the grid center.
///
/// Voxels are stored x-fastest: `index = i + nx * (j + ny * k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Vec<f64>,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub spacing: f64,
    /// Preferred payload type when the volume is written to disk.
    pub dtype: Dtype,
}

/// Square 2D image of side `l` pixels with isotropic pixel spacing (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    pub pixels: Vec<f64>,
    pub l: usize,
    pub spacing: f64,
}

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("volume is constant (min == max); rescale undefined")]
    ConstantVolume,
    #[error("normalization mask selects no voxels")]
    EmptyMask,
    #[error("masked region has zero variance")]
    ZeroVariance,
    #[error("mask length {0} does not match voxel count {1}")]
    MaskShape(usize, usize),
}

impl Volume {
    pub fn new(nx: usize, ny: usize, nz: usize, spacing: f64, data: Vec<f64>) -> Self {
        assert!(spacing > 0.0, "spacing must be positive");
        assert_eq!(data.len(), nx * ny * nz, "payload does not match dims");
        Volume {
            data,
            nx,
            ny,
            nz,
            spacing,
            dtype: Dtype::F32,
        }
    }

    pub fn zeros(nx: usize, ny: usize, nz: usize, spacing: f64) -> Self {
        Volume::new(nx, ny, nz, spacing, vec![0.0; nx * ny * nz])
    }

    /// Build a volume by evaluating `f` at every voxel's world point (mm).
    pub fn from_world_fn(
        nx: usize,
        ny: usize,
        nz: usize,
        spacing: f64,
        mut f: impl FnMut(f64, f64, f64) -> f64,
    ) -> Self {
        let mut v = Volume::zeros(nx, ny, nz, spacing);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let p = v.voxel_to_world(i as f64, j as f64, k as f64);
                    let idx = i + nx * (j + ny * k);
                    v.data[idx] = f(p.x, p.y, p.z);
                }
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[i + self.nx * (j + self.ny * k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        self.data[i + self.nx * (j + self.ny * k)] = value;
    }

    /// World coordinate (mm) of fractional voxel indices, origin at grid center.
    #[inline]
    pub fn voxel_to_world(&self, i: f64, j: f64, k: f64) -> Vector3<f64> {
        Vector3::new(
            (i - 0.5 * (self.nx as f64 - 1.0)) * self.spacing,
            (j - 0.5 * (self.ny as f64 - 1.0)) * self.spacing,
            (k - 0.5 * (self.nz as f64 - 1.0)) * self.spacing,
        )
    }

    /// Fractional voxel indices of a world point (mm).
    #[inline]
    pub fn world_to_voxel(&self, p: &Vector3<f64>) -> (f64, f64, f64) {
        (
            p.x / self.spacing + 0.5 * (self.nx as f64 - 1.0),
            p.y / self.spacing + 0.5 * (self.ny as f64 - 1.0),
            p.z / self.spacing + 0.5 * (self.nz as f64 - 1.0),
        )
    }

    /// Physical side lengths (mm) of the voxel grid.
    pub fn side_mm(&self) -> Vector3<f64> {
        Vector3::new(
            self.nx as f64 * self.spacing,
            self.ny as f64 * self.spacing,
            self.nz as f64 * self.spacing,
        )
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

impl SliceImage {
    pub fn new(l: usize, spacing: f64, pixels: Vec<f64>) -> Self {
        assert!(l > 0, "slice side must be positive");
        assert!(spacing > 0.0, "spacing must be positive");
        assert_eq!(pixels.len(), l * l);
        SliceImage { pixels, l, spacing }
    }

    pub fn zeros(l: usize, spacing: f64) -> Self {
        SliceImage::new(l, spacing, vec![0.0; l * l])
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pixels[i + self.l * j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.pixels[i + self.l * j] = value;
    }

    /// In-plane mm coordinates of pixel `(i, j)`, centered on the slice.
    #[inline]
    pub fn pixel_to_plane(&self, i: f64, j: f64) -> (f64, f64) {
        let half = 0.5 * (self.l as f64 - 1.0);
        ((i - half) * self.spacing, (j - half) * self.spacing)
    }

    /// Fraction of pixels with nonzero intensity.
    pub fn content_fraction(&self) -> f64 {
        let nonzero = self.pixels.iter().filter(|p| **p != 0.0).count();
        nonzero as f64 / self.pixels.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }
}

/// Trilinear interpolation at a world point; outside the grid reads as 0.
pub fn trilinear_sample(v: &Volume, p: &Vector3<f64>) -> f64 {
    let (u, w, s) = v.world_to_voxel(p);
    let i0 = u.floor();
    let j0 = w.floor();
    let k0 = s.floor();
    let fx = u - i0;
    let fy = w - j0;
    let fz = s - k0;

    let mut acc = 0.0;
    for dk in 0..2 {
        let k = k0 as i64 + dk as i64;
        if k < 0 || k >= v.nz as i64 {
            continue;
        }
        let wz = if dk == 0 { 1.0 - fz } else { fz };
        for dj in 0..2 {
            let j = j0 as i64 + dj as i64;
            if j < 0 || j >= v.ny as i64 {
                continue;
            }
            let wy = if dj == 0 { 1.0 - fy } else { fy };
            for di in 0..2 {
                let i = i0 as i64 + di as i64;
                if i < 0 || i >= v.nx as i64 {
                    continue;
                }
                let wx = if di == 0 { 1.0 - fx } else { fx };
                acc += wx * wy * wz * v.get(i as usize, j as usize, k as usize);
            }
        }
    }
    acc
}

/// Extract an oblique `l x l` slice at pose `t`.
///
/// Pixel `(i, j)` samples the world point `R * (u, w, 0) + trans` where
/// `(u, w)` are the pixel's centered in-plane mm coordinates. The identity
/// pose reproduces the central axial plane.
pub fn extract_slice(v: &Volume, t: &RigidTransform, l: usize, spacing: f64) -> SliceImage {
    let mut img = SliceImage::zeros(l, spacing);
    for j in 0..l {
        for i in 0..l {
            let (u, w) = img.pixel_to_plane(i as f64, j as f64);
            let p = t.apply(&Vector3::new(u, w, 0.0));
            img.set(i, j, trilinear_sample(v, &p));
        }
    }
    img
}

/// Resample a volume under a rigid motion `g` of the imaged object:
/// `out(p) = in(g^-1 p)` on the same grid.
pub fn resample_volume(v: &Volume, g: &RigidTransform) -> Volume {
    let ginv = g.invert();
    let mut out = Volume::zeros(v.nx, v.ny, v.nz, v.spacing);
    out.dtype = v.dtype;
    for k in 0..v.nz {
        for j in 0..v.ny {
            for i in 0..v.nx {
                let p = v.voxel_to_world(i as f64, j as f64, k as f64);
                out.set(i, j, k, trilinear_sample(v, &ginv.apply(&p)));
            }
        }
    }
    out
}

/// Affinely map the intensity range `[min, max]` onto `[lo, hi]`.
pub fn minmax_rescale(v: &Volume, lo: f64, hi: f64) -> Result<Volume, VolumeError> {
    let (vmin, vmax) = v.min_max();
    if vmax <= vmin {
        return Err(VolumeError::ConstantVolume);
    }
    let scale = (hi - lo) / (vmax - vmin);
    let mut out = v.clone();
    for x in out.data.iter_mut() {
        *x = lo + (*x - vmin) * scale;
    }
    Ok(out)
}

/// Scale masked voxels to zero mean and unit (population) standard deviation;
/// voxels outside the mask are set to 0. `None` normalizes every voxel.
pub fn zscore_normalize(v: &Volume, mask: Option<&[bool]>) -> Result<Volume, VolumeError> {
    if let Some(m) = mask {
        if m.len() != v.data.len() {
            return Err(VolumeError::MaskShape(m.len(), v.data.len()));
        }
    }
    let selected = |idx: usize| mask.map_or(true, |m| m[idx]);

    let mut n = 0usize;
    let mut sum = 0.0;
    for (idx, &x) in v.data.iter().enumerate() {
        if selected(idx) {
            n += 1;
            sum += x;
        }
    }
    if n == 0 {
        return Err(VolumeError::EmptyMask);
    }
    let mean = sum / n as f64;
    let var = v
        .data
        .iter()
        .enumerate()
        .filter(|(idx, _)| selected(*idx))
        .map(|(_, &x)| (x - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    if var <= 0.0 {
        return Err(VolumeError::ZeroVariance);
    }
    let std = var.sqrt();

    let mut out = v.clone();
    for (idx, x) in out.data.iter_mut().enumerate() {
        *x = if selected(idx) { (*x - mean) / std } else { 0.0 };
    }
    Ok(out)
}

/// Linear-interpolation quantile of a sorted slice, `q` in `[0, 1]`.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n as f64 - 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Clamp nonzero intensities to the `[low, high]` quantiles of the nonzero
/// distribution. Background zeros are left untouched so masked volumes keep
/// their black background.
pub fn percentile_clip(v: &Volume, low: f64, high: f64) -> Volume {
    assert!(
        (0.0..=1.0).contains(&low) && (0.0..=1.0).contains(&high) && low < high,
        "quantile bounds must satisfy 0 <= low < high <= 1"
    );
    let mut nonzero: Vec<f64> = v.data.iter().copied().filter(|x| *x != 0.0).collect();
    if nonzero.is_empty() {
        return v.clone();
    }
    nonzero.sort_by(|a, b| a.partial_cmp(b).expect("non-finite intensity"));
    let qlo = quantile_sorted(&nonzero, low);
    let qhi = quantile_sorted(&nonzero, high);

    let mut out = v.clone();
    for x in out.data.iter_mut() {
        if *x != 0.0 {
            *x = x.clamp(qlo, qhi);
        }
    }
    out
}
