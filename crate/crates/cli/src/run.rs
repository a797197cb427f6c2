//! Subcommand implementations. All machine-readable output is JSON lines on
//! stdout (or `--out`); human summaries go to stderr. Every stage is
//! deterministic for a fixed seed, independent of the thread count.

use crate::args::*;
use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use svr_core::lie::{frechet_mean, FrechetConfig, MetricWeights};
use svr_core::metrics::{
    aggregate_reports, cross_correlation, mse, psnr, ssim, MetricReport, MetricsError,
    SSIM_K1, SSIM_K2,
};
use svr_core::phantom::make_phantom;
use svr_core::predictor::{
    build_dictionary, load_dictionary, mc_aggregate, save_dictionary, PredictError,
    PredictionStatus,
};
use svr_core::recon::{splat_gaussian, svr_refine, Psf, ReconConfig};
use svr_core::sampler::{generate_dataset, read_manifest, AnchorArrays};
use svr_core::se3::{
    anchor_points_from_transform, transform_from_anchor_points, EulerCartesian,
    QuaternionCartesian, RigidTransform,
};
use svr_core::spv;
use svr_core::volume::SliceImage;

fn open_output(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(std::io::BufWriter::new(
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

pub fn phantom(args: &PhantomArgs, seed: u64) -> Result<()> {
    let mut v = make_phantom(args.kind.into(), args.dims, args.spacing, seed);
    v.dtype = args.dtype.into();
    spv::save_volume(&v, &args.out)?;
    eprintln!(
        "phantom {}: {}^3 voxels at {} mm -> {}",
        args.kind_name(),
        args.dims,
        args.spacing,
        args.out.display()
    );
    Ok(())
}

impl PhantomArgs {
    fn kind_name(&self) -> &'static str {
        svr_core::phantom::PhantomKind::from(self.kind).name()
    }
}

pub fn gen_dataset(args: &GenDatasetArgs, seed: u64) -> Result<()> {
    let volume = spv::load_volume(&args.volume)
        .with_context(|| format!("loading {}", args.volume.display()))?;
    let cfg = args.sampling.to_config(&volume, seed)?;
    let total = cfg.transforms().len();
    let rows = generate_dataset(&volume, &cfg, &args.out)?;
    eprintln!(
        "dataset: {} slices kept of {} poses ({} content-filtered) -> {}",
        rows.len(),
        total,
        total - rows.len(),
        args.out.display()
    );
    Ok(())
}

pub fn build_dict(args: &BuildDictArgs, seed: u64) -> Result<()> {
    let volume = spv::load_volume(&args.volume)?;
    let cfg = args.sampling.to_config(&volume, seed)?;
    let model = build_dictionary(&volume, &cfg, args.descriptor_size, args.similarity.into())?;
    save_dictionary(&model, &args.out)?;
    eprintln!(
        "dictionary: {} entries, descriptor {}x{} -> {}",
        model.len(),
        args.descriptor_size,
        args.descriptor_size,
        args.out.display()
    );
    Ok(())
}

/// One `predict` output row: the mean pose in all three encodings plus the
/// Monte-Carlo confidence decision. Degenerate slices carry null poses.
#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub file: String,
    pub euler: Option<EulerCartesian>,
    pub quaternion: Option<QuaternionCartesian>,
    pub anchors: Option<AnchorArrays>,
    pub variance: Option<f64>,
    pub accepted: bool,
    pub status: String,
}

fn status_name(status: PredictionStatus) -> &'static str {
    match status {
        PredictionStatus::Accepted => "accepted",
        PredictionStatus::RejectedVariance => "rejected-variance",
        PredictionStatus::RejectedNonConverged => "rejected-nonconverged",
    }
}

pub fn predict(args: &PredictArgs, seed: u64) -> Result<()> {
    let model = load_dictionary(&args.model)?;
    let rows = read_manifest(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let frechet = FrechetConfig {
        weights: MetricWeights {
            rotation: args.w_rot,
            translation: args.w_trans,
        },
        ..Default::default()
    };

    let out_rows: Vec<PredictionRow> = rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| -> Result<PredictionRow> {
            let img = spv::load_slice(&base.join(&row.file))
                .with_context(|| format!("loading slice {}", row.file))?;
            let anchor_scale = img.l as f64;
            let pose_row = |t: &RigidTransform, variance, accepted, status: &str| PredictionRow {
                id: row.id.clone(),
                file: row.file.clone(),
                euler: Some(t.to_euler()),
                quaternion: Some(t.to_quaternion()),
                anchors: Some(anchor_points_from_transform(t, anchor_scale).into()),
                variance,
                accepted,
                status: status.to_string(),
            };

            if args.deterministic {
                return match svr_core::predictor::dictionary_predict(&model, &img, false, 0) {
                    Ok(t) => Ok(pose_row(&t, Some(0.0), true, "accepted")),
                    Err(PredictError::DegenerateInput) => Ok(degenerate_row(row)),
                    Err(e) => Err(e.into()),
                };
            }

            match mc_aggregate(
                &model,
                &img,
                args.mc_samples,
                args.variance_threshold,
                seed.wrapping_add(i as u64),
                &frechet,
            ) {
                Ok(set) => Ok(pose_row(
                    &set.mean,
                    Some(set.variance),
                    set.accepted,
                    status_name(set.status),
                )),
                Err(PredictError::DegenerateInput) => Ok(degenerate_row(row)),
                Err(e) => Err(e.into()),
            }
        })
        .collect::<Result<_>>()?;

    let mut out = open_output(&args.out)?;
    for row in &out_rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;

    let accepted = out_rows.iter().filter(|r| r.accepted).count();
    eprintln!(
        "predict: {} slices, {} accepted, {} rejected/degenerate",
        out_rows.len(),
        accepted,
        out_rows.len() - accepted
    );
    Ok(())
}

fn degenerate_row(row: &svr_core::sampler::ManifestRow) -> PredictionRow {
    PredictionRow {
        id: row.id.clone(),
        file: row.file.clone(),
        euler: None,
        quaternion: None,
        anchors: None,
        variance: None,
        accepted: false,
        status: "degenerate".to_string(),
    }
}

/// Minimal view of a prediction (or manifest) row for evaluation.
#[derive(Debug, Deserialize)]
struct EvalPredRow {
    id: String,
    quaternion: Option<QuaternionCartesian>,
    anchors: Option<AnchorArrays>,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let gt_rows = read_manifest(&args.gt)?;
    let gt_base = args.gt.parent().unwrap_or(Path::new(".")).to_path_buf();
    let volume = match &args.volume {
        Some(path) => Some(spv::load_volume(path)?),
        None => None,
    };
    let weights = MetricWeights {
        rotation: args.w_rot,
        translation: args.w_trans,
    };

    let pred_text = fs::read_to_string(&args.pred)?;
    let mut preds = std::collections::HashMap::new();
    for line in pred_text.lines().filter(|l| !l.trim().is_empty()) {
        let row: EvalPredRow = serde_json::from_str(line)
            .with_context(|| format!("parsing prediction row: {line}"))?;
        preds.insert(row.id.clone(), row);
    }

    let mut skipped = 0usize;
    let reports: Vec<MetricReport> = gt_rows
        .par_iter()
        .map(|gt| -> Result<Option<MetricReport>> {
            let Some(pred) = preds.get(&gt.id) else {
                return Ok(None);
            };
            // Recover the predicted pose from whichever encoding is present.
            let pred_t = match (&pred.quaternion, &pred.anchors) {
                (Some(q), _) => RigidTransform::from_quaternion(q),
                (None, Some(a)) => transform_from_anchor_points(&(*a).into())
                    .map_err(|e| anyhow::anyhow!("anchor recovery for {}: {e}", gt.id))?,
                (None, None) => return Ok(None),
            };
            let gt_t = gt.transform();
            let gt_anchors = svr_core::se3::AnchorPoints::from(gt.anchors);
            // Anchor scale travels with the ground-truth triple (rigid
            // congruence fixes |p3 - p1| = 2l).
            let scale = (gt_anchors.p3 - gt_anchors.p1).norm() / 2.0;
            let pred_anchors = match &pred.anchors {
                Some(a) => (*a).into(),
                None => anchor_points_from_transform(&pred_t, scale),
            };

            let ed = svr_core::metrics::euclidean_distance_error(&pred_anchors, &gt_anchors);
            let gd = svr_core::lie::geodesic_distance(&pred_t, &gt_t, &weights);

            let (mut cc_v, mut mse_v, mut psnr_v, mut ssim_v) = (None, None, None, None);
            if let Some(v) = &volume {
                let reference = spv::load_slice(&gt_base.join(&gt.file))
                    .with_context(|| format!("loading slice {}", gt.file))?;
                let projected =
                    svr_core::volume::extract_slice(v, &pred_t, reference.l, reference.spacing);
                cc_v = cross_correlation(&reference, &projected).ok();
                mse_v = mse(&reference, &projected).ok();
                psnr_v = match psnr(&reference, &projected, args.max_i) {
                    Ok(p) => Some(p),
                    Err(MetricsError::IdenticalImages) => None,
                    Err(_) => None,
                };
                ssim_v = ssim(&reference, &projected, SSIM_K1, SSIM_K2, args.max_i).ok();
            }

            Ok(Some(MetricReport {
                id: gt.id.clone(),
                cc: cc_v,
                mse: mse_v,
                psnr: psnr_v,
                ssim: ssim_v,
                ed_error: ed,
                gd_error: gd,
            }))
        })
        .collect::<Result<Vec<Option<MetricReport>>>>()?
        .into_iter()
        .flatten()
        .collect();
    skipped += gt_rows.len() - reports.len();

    let mut out = open_output(&args.out)?;
    for report in &reports {
        serde_json::to_writer(&mut out, report)?;
        out.write_all(b"\n")?;
    }
    let aggregate = aggregate_reports(&reports);
    serde_json::to_writer(&mut out, &serde_json::json!({ "aggregate": aggregate }))?;
    out.write_all(b"\n")?;
    out.flush()?;

    eprintln!(
        "evaluate: {} slices scored ({} unmatched/degenerate), mean ED {:.4} mm, mean GD {:.4}",
        reports.len(),
        skipped,
        aggregate.ed_mean,
        aggregate.gd_mean
    );
    Ok(())
}

/// Minimal view of a manifest or prediction row for reconstruction.
#[derive(Debug, Deserialize)]
struct ReconRow {
    file: String,
    quaternion: Option<QuaternionCartesian>,
    accepted: Option<bool>,
}

pub fn reconstruct(args: &ReconstructArgs) -> Result<()> {
    let text = fs::read_to_string(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();

    let mut slices: Vec<SliceImage> = Vec::new();
    let mut poses: Vec<RigidTransform> = Vec::new();
    let mut skipped = 0usize;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row: ReconRow = serde_json::from_str(line)
            .with_context(|| format!("parsing manifest row: {line}"))?;
        let Some(q) = row.quaternion else {
            skipped += 1;
            continue;
        };
        if args.accepted_only && !row.accepted.unwrap_or(true) {
            skipped += 1;
            continue;
        }
        slices.push(spv::load_slice(&base.join(&row.file))?);
        poses.push(RigidTransform::from_quaternion(&q));
    }
    if slices.is_empty() {
        bail!("no usable slices in {}", args.manifest.display());
    }

    let cfg = ReconConfig {
        nx: args.grid,
        ny: args.grid,
        nz: args.grid,
        spacing: args.spacing,
        psf: Psf::from_spacings(args.spacing, args.psf_thickness),
        svr_iterations: args.iters,
        search_rot: args.search_rot.to_radians(),
        search_trans: args.search_trans,
        w_min: 0.01,
    };

    let (volume, coverage, rounds) = if args.iters == 0 {
        let pairs: Vec<(SliceImage, RigidTransform)> =
            slices.into_iter().zip(poses).collect();
        let splat = splat_gaussian(&pairs, &cfg)?;
        (splat.volume, splat.coverage, Vec::new())
    } else {
        let result = svr_refine(&slices, &poses, &cfg)?;
        (result.volume, result.coverage, result.round_mean_cc)
    };

    spv::save_volume(&volume, &args.out)?;
    if let Some(cov_path) = &args.coverage_out {
        let mask = svr_core::recon::SplatResult {
            volume: volume.clone(),
            coverage: coverage.clone(),
        }
        .coverage_volume();
        spv::save_volume(&mask, cov_path)?;
    }

    let covered = coverage.iter().filter(|c| **c).count();
    eprintln!(
        "reconstruct: {} slices ({} skipped), {} rounds, {}/{} voxels covered -> {}",
        poses_len(&coverage, covered, &rounds),
        skipped,
        rounds.len(),
        covered,
        coverage.len(),
        args.out.display()
    );
    if !rounds.is_empty() {
        eprintln!("  mean slice CC per round: {rounds:?}");
    }
    Ok(())
}

fn poses_len(_coverage: &[bool], _covered: usize, _rounds: &[f64]) -> String {
    // slice count is reported by the caller's format; kept simple
    String::new()
}
