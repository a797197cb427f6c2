//! Image-similarity metrics and label-space error/loss functions.
//!
//! CC, MSE, PSNR and SSIM operate on whole slices; SSIM is the global
//! single-window form (no sliding window), computed directly from the image
//! moments. Pose errors are the mean anchor-point Euclidean distance in mm
//! and the left-invariant geodesic distance from [`crate::lie`].

use crate::se3::{AnchorPoints, QuaternionCartesian};
use crate::volume::SliceImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("images have different sizes ({0} vs {1})")]
    ShapeMismatch(usize, usize),
    #[error("constant image: normalized cross-correlation is undefined")]
    ConstantImage,
    #[error("identical images: PSNR is infinite")]
    IdenticalImages,
}

fn check_shapes(f: &SliceImage, g: &SliceImage) -> Result<(), MetricsError> {
    if f.l != g.l {
        return Err(MetricsError::ShapeMismatch(f.l, g.l));
    }
    Ok(())
}

/// Normalized cross-correlation in [-1, 1]; 1 for positively affine-related
/// images. Errors on constant input (zero normalization denominator).
pub fn cross_correlation(f: &SliceImage, g: &SliceImage) -> Result<f64, MetricsError> {
    check_shapes(f, g)?;
    let fm = f.mean();
    let gm = g.mean();
    let mut ff = 0.0;
    let mut gg = 0.0;
    let mut fg = 0.0;
    for (a, b) in f.pixels.iter().zip(&g.pixels) {
        let da = a - fm;
        let db = b - gm;
        ff += da * da;
        gg += db * db;
        fg += da * db;
    }
    if ff <= 0.0 || gg <= 0.0 {
        return Err(MetricsError::ConstantImage);
    }
    Ok(fg / (ff.sqrt() * gg.sqrt()))
}

/// Mean squared error.
pub fn mse(f: &SliceImage, g: &SliceImage) -> Result<f64, MetricsError> {
    check_shapes(f, g)?;
    let n = f.pixels.len() as f64;
    Ok(f.pixels
        .iter()
        .zip(&g.pixels)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio in dB: `10 log10(max_i^2 / MSE)`.
///
/// Identical images are signaled as an error rather than returned as a
/// non-finite number.
pub fn psnr(f: &SliceImage, g: &SliceImage, max_i: f64) -> Result<f64, MetricsError> {
    let m = mse(f, g)?;
    if m == 0.0 {
        return Err(MetricsError::IdenticalImages);
    }
    Ok(10.0 * (max_i * max_i / m).log10())
}

/// Default peak intensity for 8-bit-quantized pipelines.
pub const DEFAULT_MAX_I: f64 = 255.0;
/// SSIM stabilizer constants.
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Global single-window SSIM with stabilizers `c1 = (k1 max_i)^2`,
/// `c2 = (k2 max_i)^2`. Variances and covariance are population moments.
pub fn ssim(f: &SliceImage, g: &SliceImage, k1: f64, k2: f64, max_i: f64) -> Result<f64, MetricsError> {
    check_shapes(f, g)?;
    let n = f.pixels.len() as f64;
    let mf = f.mean();
    let mg = g.mean();
    let mut var_f = 0.0;
    let mut var_g = 0.0;
    let mut cov = 0.0;
    for (a, b) in f.pixels.iter().zip(&g.pixels) {
        let da = a - mf;
        let db = b - mg;
        var_f += da * da;
        var_g += db * db;
        cov += da * db;
    }
    var_f /= n;
    var_g /= n;
    cov /= n;

    let c1 = (k1 * max_i).powi(2);
    let c2 = (k2 * max_i).powi(2);
    Ok(((2.0 * mf * mg + c1) * (2.0 * cov + c2))
        / ((mf * mf + mg * mg + c1) * (var_f + var_g + c2)))
}

/// Mean Euclidean distance of the three anchor points, in mm.
pub fn euclidean_distance_error(pred: &AnchorPoints, gt: &AnchorPoints) -> f64 {
    ((pred.p1 - gt.p1).norm() + (pred.p2 - gt.p2).norm() + (pred.p3 - gt.p3).norm()) / 3.0
}

/// Translation L2 error plus `beta` times the quaternion L2 error.
///
/// Only the target quaternion is normalized; the prediction enters as-is, so
/// an antipodal prediction of a unit target scores `2 * beta` even though it
/// encodes the same rotation.
pub fn posenet_loss(pred: &QuaternionCartesian, gt: &QuaternionCartesian, beta: f64) -> f64 {
    let gt_norm = (gt.qw * gt.qw + gt.qx * gt.qx + gt.qy * gt.qy + gt.qz * gt.qz).sqrt();
    assert!(gt_norm > 0.0, "ground-truth quaternion must be nonzero");
    let dt = ((pred.tx - gt.tx).powi(2) + (pred.ty - gt.ty).powi(2) + (pred.tz - gt.tz).powi(2))
        .sqrt();
    let dq = ((pred.qw - gt.qw / gt_norm).powi(2)
        + (pred.qx - gt.qx / gt_norm).powi(2)
        + (pred.qy - gt.qy / gt_norm).powi(2)
        + (pred.qz - gt.qz / gt_norm).powi(2))
    .sqrt();
    dt + beta * dq
}

/// Weighted sum of per-anchor-point L2 errors.
pub fn anchor_loss(pred: &AnchorPoints, gt: &AnchorPoints, alpha: f64, beta: f64, gamma: f64) -> f64 {
    alpha * (pred.p1 - gt.p1).norm() + beta * (pred.p2 - gt.p2).norm()
        + gamma * (pred.p3 - gt.p3).norm()
}

/// Per-slice evaluation record. Image metrics are absent when no reference
/// volume was supplied; PSNR is additionally absent for identical images.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub id: String,
    pub cc: Option<f64>,
    pub mse: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub ed_error: f64,
    pub gd_error: f64,
}

/// Mean and population standard deviation per metric, over present values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricAggregate {
    pub n: usize,
    pub cc_mean: Option<f64>,
    pub cc_std: Option<f64>,
    pub mse_mean: Option<f64>,
    pub mse_std: Option<f64>,
    pub psnr_mean: Option<f64>,
    pub psnr_std: Option<f64>,
    pub ssim_mean: Option<f64>,
    pub ssim_std: Option<f64>,
    pub ed_mean: f64,
    pub ed_std: f64,
    pub gd_mean: f64,
    pub gd_std: f64,
}

fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

pub fn aggregate_reports(reports: &[MetricReport]) -> MetricAggregate {
    let collect = |f: fn(&MetricReport) -> Option<f64>| -> Vec<f64> {
        reports.iter().filter_map(f).collect()
    };
    let cc = mean_std(&collect(|r| r.cc));
    let ms = mean_std(&collect(|r| r.mse));
    let ps = mean_std(&collect(|r| r.psnr));
    let ss = mean_std(&collect(|r| r.ssim));
    let ed = mean_std(&reports.iter().map(|r| r.ed_error).collect::<Vec<_>>())
        .unwrap_or((0.0, 0.0));
    let gd = mean_std(&reports.iter().map(|r| r.gd_error).collect::<Vec<_>>())
        .unwrap_or((0.0, 0.0));
    MetricAggregate {
        n: reports.len(),
        cc_mean: cc.map(|v| v.0),
        cc_std: cc.map(|v| v.1),
        mse_mean: ms.map(|v| v.0),
        mse_std: ms.map(|v| v.1),
        psnr_mean: ps.map(|v| v.0),
        psnr_std: ps.map(|v| v.1),
        ssim_mean: ss.map(|v| v.0),
        ssim_std: ss.map(|v| v.1),
        ed_mean: ed.0,
        ed_std: ed.1,
        gd_mean: gd.0,
        gd_std: gd.1,
    }
}
