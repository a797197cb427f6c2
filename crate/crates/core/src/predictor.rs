//! Pose prediction: the predictor contract that abstracts the learned model,
//! a deterministic dictionary (template-matching) baseline, Monte-Carlo
//! aggregation of stochastic predictions on SE(3), and confidence-based
//! slice rejection.
//!
//! The dictionary indexes descriptors (downsampled, intensity-normalized
//! slices) for every pose of a sampling configuration. Deterministic
//! prediction returns the best-matching entry's pose; stochastic prediction
//! draws among the top-k entries with softmax weights, standing in for the
//! dropout sampling of a learned predictor so the aggregation and
//! confidence machinery can be exercised end to end.

use crate::lie::{frechet_mean, FrechetConfig};
use crate::metrics::{ssim, SSIM_K1, SSIM_K2};
use crate::sampler::SamplingConfig;
use crate::se3::RigidTransform;
use crate::spv::SpvError;
use crate::volume::{extract_slice, SliceImage, Volume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("degenerate input: constant image has no matchable structure")]
    DegenerateInput,
    #[error("dictionary is empty after content filtering")]
    EmptyDictionary,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Spv(#[from] SpvError),
    #[error("malformed dictionary file: {0}")]
    MalformedModel(String),
}

/// Behavioral contract for a pose predictor.
///
/// `stochastic = false` must be deterministic for a fixed model state; the
/// returned transform always satisfies the rigid-transform invariants. A
/// learned model can be substituted behind this trait without touching
/// aggregation, filtering or reconstruction.
pub trait PosePredictor: Sync {
    fn predict(
        &self,
        image: &SliceImage,
        stochastic: bool,
        rng_seed: u64,
    ) -> Result<RigidTransform, PredictError>;

    /// Batch of stochastic predictions, one per seed. Semantically identical
    /// to calling [`predict`](Self::predict) per seed; implementations may
    /// share per-image work across the batch.
    fn predict_many(
        &self,
        image: &SliceImage,
        seeds: &[u64],
    ) -> Result<Vec<RigidTransform>, PredictError> {
        seeds.iter().map(|s| self.predict(image, true, *s)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Similarity {
    Cc,
    Ssim,
}

#[derive(Debug, Clone)]
struct DictEntry {
    /// Raw downsampled descriptor (for SSIM).
    raw: Vec<f64>,
    /// Zero-mean, unit-norm descriptor (for CC as a dot product).
    normalized: Vec<f64>,
    transform: RigidTransform,
}

/// Template dictionary over a pose-sampling grid.
#[derive(Debug, Clone)]
pub struct DictionaryModel {
    entries: Vec<DictEntry>,
    pub descriptor_size: usize,
    pub similarity: Similarity,
    /// Stochastic mode draws among this many top-ranked entries.
    pub top_k: usize,
    /// Softmax temperature in similarity units.
    pub temperature: f64,
}

pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_TEMPERATURE: f64 = 0.05;
/// Default descriptor resolution; full-resolution matching over tens of
/// thousands of entries is needlessly slow.
pub const DEFAULT_DESCRIPTOR_SIZE: usize = 32;

/// Box-average resample of a square image to `d x d`. Empty bins (upsampling)
/// fall back to the nearest source pixel.
fn resample_descriptor(img: &SliceImage, d: usize) -> Vec<f64> {
    let l = img.l;
    let mut out = vec![0.0; d * d];
    for b in 0..d {
        let j0 = b * l / d;
        let j1 = (((b + 1) * l) / d).max(j0 + 1).min(l.max(1));
        for a in 0..d {
            let i0 = a * l / d;
            let i1 = (((a + 1) * l) / d).max(i0 + 1).min(l.max(1));
            let mut sum = 0.0;
            let mut count = 0usize;
            for j in j0..j1.max(j0 + 1) {
                for i in i0..i1.max(i0 + 1) {
                    sum += img.get(i.min(l - 1), j.min(l - 1));
                    count += 1;
                }
            }
            out[a + d * b] = sum / count as f64;
        }
    }
    out
}

/// Zero-mean, unit-norm copy; `None` for constant input.
fn normalize_descriptor(raw: &[f64]) -> Option<Vec<f64>> {
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let norm = raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return None;
    }
    Some(raw.iter().map(|v| (v - mean) / norm).collect())
}

/// Build a dictionary by sampling the atlas with `cfg`: one entry per
/// content-bearing pose, descriptor at `descriptor_size`. Poses whose slices
/// fail the content filter or are constant (unmatchable) are skipped.
pub fn build_dictionary(
    atlas: &Volume,
    cfg: &SamplingConfig,
    descriptor_size: usize,
    similarity: Similarity,
) -> Result<DictionaryModel, PredictError> {
    assert!(descriptor_size >= 1);
    let transforms = cfg.transforms();
    let entries: Vec<DictEntry> = transforms
        .par_iter()
        .filter_map(|t| {
            let img = extract_slice(atlas, t, cfg.slice_px, cfg.slice_spacing);
            if img.content_fraction() < cfg.min_content {
                return None;
            }
            let raw = resample_descriptor(&img, descriptor_size);
            let normalized = normalize_descriptor(&raw)?;
            Some(DictEntry {
                raw,
                normalized,
                transform: *t,
            })
        })
        .collect();
    if entries.is_empty() {
        return Err(PredictError::EmptyDictionary);
    }
    Ok(DictionaryModel {
        entries,
        descriptor_size,
        similarity,
        top_k: DEFAULT_TOP_K,
        temperature: DEFAULT_TEMPERATURE,
    })
}

impl DictionaryModel {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn poses(&self) -> impl Iterator<Item = &RigidTransform> {
        self.entries.iter().map(|e| &e.transform)
    }

    /// Similarity of a query image against every entry, in entry order.
    pub fn similarities(&self, image: &SliceImage) -> Result<Vec<f64>, PredictError> {
        let raw = resample_descriptor(image, self.descriptor_size);
        match self.similarity {
            Similarity::Cc => {
                let q = normalize_descriptor(&raw).ok_or(PredictError::DegenerateInput)?;
                Ok(self
                    .entries
                    .par_iter()
                    .map(|e| e.normalized.iter().zip(&q).map(|(a, b)| a * b).sum())
                    .collect())
            }
            Similarity::Ssim => {
                let d = self.descriptor_size;
                let query = SliceImage::new(d, 1.0, raw);
                Ok(self
                    .entries
                    .par_iter()
                    .map(|e| {
                        let entry_img = SliceImage::new(d, 1.0, e.raw.clone());
                        ssim(&query, &entry_img, SSIM_K1, SSIM_K2, 255.0).unwrap_or(-1.0)
                    })
                    .collect())
            }
        }
    }
}

/// Index of the maximum, lowest index on ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Top-k candidates with their softmax weights, shared across draws.
struct Candidates {
    ranked: Vec<usize>,
    weights: Vec<f64>,
    total: f64,
}

impl DictionaryModel {
    fn candidates(&self, sims: &[f64]) -> Candidates {
        let k = self.top_k.min(sims.len()).max(1);
        let mut ranked: Vec<usize> = (0..sims.len()).collect();
        ranked.sort_by(|a, b| sims[*b].partial_cmp(&sims[*a]).unwrap().then(a.cmp(b)));
        ranked.truncate(k);
        let max_sim = sims[ranked[0]];
        let weights: Vec<f64> = ranked
            .iter()
            .map(|i| ((sims[*i] - max_sim) / self.temperature).exp())
            .collect();
        let total = weights.iter().sum();
        Candidates {
            ranked,
            weights,
            total,
        }
    }

    fn draw(&self, c: &Candidates, rng_seed: u64) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let pick: f64 = rng.random_range(0.0..c.total);
        let mut acc = 0.0;
        for (idx, w) in c.ranked.iter().zip(&c.weights) {
            acc += w;
            if pick < acc {
                return *idx;
            }
        }
        *c.ranked.last().unwrap()
    }
}

/// Predict the pose of a slice against the dictionary.
///
/// Deterministic mode returns the top-similarity entry's pose. Stochastic
/// mode samples among the top-k entries with probability proportional to
/// `softmax(similarity / temperature)`, reproducibly for a fixed seed.
pub fn dictionary_predict(
    model: &DictionaryModel,
    image: &SliceImage,
    stochastic: bool,
    rng_seed: u64,
) -> Result<RigidTransform, PredictError> {
    let sims = model.similarities(image)?;
    if !stochastic {
        return Ok(model.entries[argmax(&sims)].transform);
    }
    let cands = model.candidates(&sims);
    Ok(model.entries[model.draw(&cands, rng_seed)].transform)
}

impl PosePredictor for DictionaryModel {
    fn predict(
        &self,
        image: &SliceImage,
        stochastic: bool,
        rng_seed: u64,
    ) -> Result<RigidTransform, PredictError> {
        dictionary_predict(self, image, stochastic, rng_seed)
    }

    /// Similarities are computed once and reused for every draw; the result
    /// is bitwise identical to per-seed [`dictionary_predict`] calls.
    fn predict_many(
        &self,
        image: &SliceImage,
        seeds: &[u64],
    ) -> Result<Vec<RigidTransform>, PredictError> {
        let sims = self.similarities(image)?;
        let cands = self.candidates(&sims);
        Ok(seeds
            .iter()
            .map(|s| self.entries[self.draw(&cands, *s)].transform)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionStatus {
    Accepted,
    RejectedVariance,
    RejectedNonConverged,
}

/// Monte-Carlo prediction set for one slice: stochastic samples, their
/// Riemannian mean and variance, and the acceptance decision.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    pub samples: Vec<RigidTransform>,
    pub mean: RigidTransform,
    pub variance: f64,
    pub status: PredictionStatus,
    pub accepted: bool,
}

impl PredictionSet {
    /// Assemble a set from raw samples (used by aggregation and by tests).
    pub fn from_samples(
        samples: Vec<RigidTransform>,
        frechet: &FrechetConfig,
        variance_threshold: f64,
    ) -> Self {
        let stats = frechet_mean(&samples, frechet).expect("non-empty sample");
        let status = if !stats.converged {
            PredictionStatus::RejectedNonConverged
        } else if stats.variance <= variance_threshold {
            PredictionStatus::Accepted
        } else {
            PredictionStatus::RejectedVariance
        };
        PredictionSet {
            samples,
            mean: stats.mean,
            variance: stats.variance,
            accepted: status == PredictionStatus::Accepted,
            status,
        }
    }
}

/// Default Monte-Carlo sample count per slice.
pub const DEFAULT_MC_SAMPLES: usize = 100;
/// Default geodesic-variance acceptance threshold. The value is tied to the
/// metric weighting, so it is configuration, not a constant of nature.
pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 10.0;

/// Run `n` stochastic predictions and reduce them to a [`PredictionSet`].
///
/// Per-sample seeds derive deterministically from `seed`. A set whose
/// Fréchet mean fails to converge is rejected with a distinct status, never
/// silently accepted.
pub fn mc_aggregate(
    predictor: &dyn PosePredictor,
    image: &SliceImage,
    n: usize,
    variance_threshold: f64,
    seed: u64,
    frechet: &FrechetConfig,
) -> Result<PredictionSet, PredictError> {
    assert!(n >= 1);
    let mut seed_rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..n).map(|_| seed_rng.random()).collect();
    let samples = predictor.predict_many(image, &seeds)?;
    Ok(PredictionSet::from_samples(samples, frechet, variance_threshold))
}

/// Partition prediction sets into `(kept, discarded)` by the variance
/// threshold, preserving order. Non-converged sets are always discarded.
pub fn confidence_filter(
    sets: Vec<PredictionSet>,
    threshold: f64,
) -> (Vec<PredictionSet>, Vec<PredictionSet>) {
    sets.into_iter().partition(|s| {
        s.status != PredictionStatus::RejectedNonConverged && s.variance <= threshold
    })
}

// --- dictionary file format -------------------------------------------------
//
// Text header like SPV1 (magic=SPD1, count, descriptor_size, similarity,
// top_k, temperature, blank line) followed per entry by 12 f64 LE (rotation
// rows then translation) and descriptor_size^2 f32 LE raw descriptor values.

pub fn save_dictionary(model: &DictionaryModel, path: &Path) -> Result<(), PredictError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(
        out,
        "magic=SPD1\ncount={}\ndescriptor_size={}\nsimilarity={}\ntop_k={}\ntemperature={}\nbyteorder=little\n\n",
        model.entries.len(),
        model.descriptor_size,
        match model.similarity {
            Similarity::Cc => "cc",
            Similarity::Ssim => "ssim",
        },
        model.top_k,
        model.temperature
    )?;
    for e in &model.entries {
        for r in 0..3 {
            for c in 0..3 {
                out.write_all(&e.transform.rotation[(r, c)].to_le_bytes())?;
            }
        }
        for c in 0..3 {
            out.write_all(&e.transform.translation[c].to_le_bytes())?;
        }
        for v in &e.raw {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_dictionary(path: &Path) -> Result<DictionaryModel, PredictError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let header_end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| PredictError::MalformedModel("missing header terminator".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end + 1])
        .map_err(|_| PredictError::MalformedModel("header is not UTF-8".into()))?;
    let mut fields = std::collections::HashMap::new();
    for line in header.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| PredictError::MalformedModel(format!("bad line {line:?}")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| -> Result<&String, PredictError> {
        fields
            .get(k)
            .ok_or_else(|| PredictError::MalformedModel(format!("missing key {k:?}")))
    };
    if get("magic")? != "SPD1" {
        return Err(PredictError::MalformedModel("bad magic".into()));
    }
    let parse_err = |k: &str| PredictError::MalformedModel(format!("bad value for {k:?}"));
    let count: usize = get("count")?.parse().map_err(|_| parse_err("count"))?;
    let d: usize = get("descriptor_size")?
        .parse()
        .map_err(|_| parse_err("descriptor_size"))?;
    let similarity = match get("similarity")?.as_str() {
        "cc" => Similarity::Cc,
        "ssim" => Similarity::Ssim,
        other => return Err(PredictError::MalformedModel(format!("similarity {other:?}"))),
    };
    let top_k: usize = get("top_k")?.parse().map_err(|_| parse_err("top_k"))?;
    let temperature: f64 = get("temperature")?
        .parse()
        .map_err(|_| parse_err("temperature"))?;

    let payload = &bytes[header_end + 2..];
    let entry_bytes = 12 * 8 + d * d * 4;
    if payload.len() != count * entry_bytes {
        return Err(PredictError::MalformedModel(format!(
            "payload size {} != {} entries x {} bytes",
            payload.len(),
            count,
            entry_bytes
        )));
    }

    let mut entries = Vec::with_capacity(count);
    for chunk in payload.chunks_exact(entry_bytes) {
        let mut vals = [0.0f64; 12];
        for (i, v) in vals.iter_mut().enumerate() {
            let mut b = [0u8; 8];
            b.copy_from_slice(&chunk[i * 8..i * 8 + 8]);
            *v = f64::from_le_bytes(b);
        }
        let rotation = nalgebra::Matrix3::new(
            vals[0], vals[1], vals[2], vals[3], vals[4], vals[5], vals[6], vals[7], vals[8],
        );
        let translation = nalgebra::Vector3::new(vals[9], vals[10], vals[11]);
        let raw: Vec<f64> = chunk[96..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let normalized = normalize_descriptor(&raw)
            .ok_or_else(|| PredictError::MalformedModel("constant descriptor".into()))?;
        entries.push(DictEntry {
            raw,
            normalized,
            transform: RigidTransform::new(rotation, translation),
        });
    }

    Ok(DictionaryModel {
        entries,
        descriptor_size: d,
        similarity,
        top_k,
        temperature,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{geodesic_distance, MetricWeights};
    use crate::phantom::{make_phantom, PhantomKind};
    use crate::sampler::{SamplingConfig, SchemeParams, TzRange};
    use crate::se3::rotation_from_euler;
    use crate::volume::extract_slice;
    use nalgebra::Vector3;

    fn small_dictionary(v: &Volume) -> (DictionaryModel, SamplingConfig) {
        let cfg = SamplingConfig {
            scheme: SchemeParams::EulerGrid {
                angle_step: 45f64.to_radians(),
            },
            tz: TzRange { min: -6.0, max: 6.0, step: 3.0 },
            seed: 0,
            slice_px: v.nx,
            slice_spacing: v.spacing,
            anchor_scale: None,
            min_content: 0.05,
        };
        let model = build_dictionary(v, &cfg, 16, Similarity::Cc).unwrap();
        (model, cfg)
    }

    #[test]
    fn identity_only_dictionary_has_one_entry() {
        let v = make_phantom(PhantomKind::Sinusoid, 24, 1.0, 1);
        let cfg = SamplingConfig {
            scheme: SchemeParams::Fibonacci { n_normals: 1, n_inplane: 1 },
            tz: TzRange::single(0.0),
            seed: 0,
            slice_px: 24,
            slice_spacing: 1.0,
            anchor_scale: None,
            min_content: 0.0,
        };
        let model = build_dictionary(&v, &cfg, 8, Similarity::Cc).unwrap();
        assert_eq!(model.len(), 1);
    }

    #[test]
    fn dictionary_entry_count_matches_dataset_rows() {
        let v = make_phantom(PhantomKind::Sinusoid, 24, 1.0, 2);
        let (model, cfg) = small_dictionary(&v);
        let dir = tempfile::tempdir().unwrap();
        let rows = crate::sampler::generate_dataset(&v, &cfg, dir.path()).unwrap();
        assert_eq!(model.len(), rows.len());
    }

    #[test]
    fn degenerate_descriptor_size_still_builds() {
        let v = make_phantom(PhantomKind::Sinusoid, 24, 1.0, 3);
        let cfg = SamplingConfig {
            scheme: SchemeParams::Fibonacci { n_normals: 4, n_inplane: 2 },
            tz: TzRange::single(0.0),
            seed: 0,
            slice_px: 24,
            slice_spacing: 1.0,
            anchor_scale: None,
            min_content: 0.05,
        };
        // descriptor_size=1 collapses every descriptor to its mean, which is
        // constant and unmatchable; the build reports the empty dictionary.
        assert!(matches!(
            build_dictionary(&v, &cfg, 1, Similarity::Cc),
            Err(PredictError::EmptyDictionary)
        ));
        // size 2 retains enough structure to build.
        let model = build_dictionary(&v, &cfg, 2, Similarity::Cc).unwrap();
        assert!(model.len() > 0);
    }

    #[test]
    fn self_retrieval_is_exact() {
        let v = make_phantom(PhantomKind::Sinusoid, 24, 1.0, 4);
        let (model, cfg) = small_dictionary(&v);
        let w = MetricWeights::default();
        let mut bitwise = 0usize;
        let poses: Vec<RigidTransform> = model.poses().cloned().collect();
        for pose in &poses {
            let img = extract_slice(&v, pose, cfg.slice_px, cfg.slice_spacing);
            let pred = dictionary_predict(&model, &img, false, 0).unwrap();
            // Euler grids containing ry = 90 deg hold gimbal twins: distinct
            // angle triples with analytically identical rotations. Retrieving
            // a twin is the same pose up to its FP rounding (~1e-16).
            assert!(geodesic_distance(&pred, pose, &w) < 1e-12);
            if pred == *pose {
                bitwise += 1;
            }
        }
        assert!(bitwise * 2 > poses.len(), "most retrievals should be bitwise self");
    }

    #[test]
    fn constant_image_is_degenerate() {
        let v = make_phantom(PhantomKind::Sinusoid, 24, 1.0, 5);
        let (model, _) = small_dictionary(&v);
        let img = SliceImage::new(24, 1.0, vec![7.0; 24 * 24]);
        assert!(matches!(
            dictionary_predict(&model, &img, false, 0),
            Err(PredictError::DegenerateInput)
        ));
    }

    #[test]
    fn stochastic_prediction_is_seed_reproducible() {
        let v = make_phantom(PhantomKind::Sinusoid, 24, 1.0, 6);
        let (model, cfg) = small_dictionary(&v);
        let pose = *model.poses().next().unwrap();
        let img = extract_slice(&v, &pose, cfg.slice_px, cfg.slice_spacing);
        let a: Vec<RigidTransform> = (0..20)
            .map(|i| dictionary_predict(&model, &img, true, 1000 + i).unwrap())
            .collect();
        let b: Vec<RigidTransform> = (0..20)
            .map(|i| dictionary_predict(&model, &img, true, 1000 + i).unwrap())
            .collect();
        assert_eq!(a, b);
        // Different seeds eventually draw different entries.
        let w = MetricWeights::default();
        let spread = a
            .iter()
            .map(|t| geodesic_distance(t, &a[0], &w))
            .fold(0.0f64, f64::max);
        assert!(spread > 0.0, "stochastic mode never left the top entry");
    }

    #[test]
    fn mc_aggregate_deterministic_predictor_zero_variance() {
        struct Fixed(RigidTransform);
        impl PosePredictor for Fixed {
            fn predict(
                &self,
                _image: &SliceImage,
                _stochastic: bool,
                _rng_seed: u64,
            ) -> Result<RigidTransform, PredictError> {
                Ok(self.0)
            }
        }
        let t = RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0));
        let img = SliceImage::zeros(8, 1.0);
        let set = mc_aggregate(&Fixed(t), &img, 25, 10.0, 7, &FrechetConfig::default()).unwrap();
        assert_eq!(set.samples.len(), 25);
        assert!(set.variance < 1e-18);
        assert!(set.accepted);
        assert_eq!(set.status, PredictionStatus::Accepted);
    }

    #[test]
    fn symmetric_perturbations_recover_pose() {
        let theta = 10f64.to_radians();
        let plus = RigidTransform::new(rotation_from_euler(0.0, 0.0, theta), Vector3::zeros());
        let minus = RigidTransform::new(rotation_from_euler(0.0, 0.0, -theta), Vector3::zeros());
        let samples = vec![plus, minus, plus, minus];
        let set = PredictionSet::from_samples(samples, &FrechetConfig::default(), 10.0);
        let w = MetricWeights::default();
        assert!(
            geodesic_distance(&set.mean, &RigidTransform::identity(), &w) < 1e-6,
            "mean should be the identity"
        );
        assert!((set.variance - theta * theta).abs() < 1e-9);
        assert!(set.accepted);
    }

    #[test]
    fn confidence_filter_threshold_partition() {
        let mk = |variance: f64| PredictionSet {
            samples: vec![RigidTransform::identity()],
            mean: RigidTransform::identity(),
            variance,
            status: PredictionStatus::Accepted,
            accepted: true,
        };
        let sets: Vec<PredictionSet> =
            [1.92, 2.46, 3.82, 9.66, 29.31, 30.92, 36.98, 43.34]
                .into_iter()
                .map(mk)
                .collect();
        let (kept, discarded) = confidence_filter(sets, 10.0);
        assert_eq!(kept.len(), 4);
        assert_eq!(discarded.len(), 4);
        assert_eq!(kept[0].variance, 1.92);
        assert_eq!(kept[3].variance, 9.66);
        assert_eq!(discarded[0].variance, 29.31);

        let zeros: Vec<PredictionSet> = (0..3).map(|_| mk(0.0)).collect();
        let (kept, discarded) = confidence_filter(zeros, 10.0);
        assert_eq!((kept.len(), discarded.len()), (3, 0));

        let mixed: Vec<PredictionSet> = vec![mk(0.0), mk(1e-12)];
        let (kept, _) = confidence_filter(mixed, 0.0);
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn predict_many_matches_per_seed_calls() {
        let v = make_phantom(PhantomKind::Sinusoid, 24, 1.0, 12);
        let (model, cfg) = small_dictionary(&v);
        let pose = *model.poses().nth(5).unwrap();
        let img = extract_slice(&v, &pose, cfg.slice_px, cfg.slice_spacing);
        let seeds: Vec<u64> = (0..50).map(|i| 31 * i + 7).collect();
        let batched = model.predict_many(&img, &seeds).unwrap();
        for (s, b) in seeds.iter().zip(&batched) {
            let single = dictionary_predict(&model, &img, true, *s).unwrap();
            assert_eq!(single, *b);
        }
    }

    #[test]
    fn dictionary_file_round_trip() {
        let v = make_phantom(PhantomKind::Sinusoid, 24, 1.0, 8);
        let (model, cfg) = small_dictionary(&v);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dict.spd");
        save_dictionary(&model, &path).unwrap();
        let back = load_dictionary(&path).unwrap();
        assert_eq!(back.len(), model.len());
        assert_eq!(back.descriptor_size, model.descriptor_size);

        // Same predictions after the round trip (f32 descriptor storage only
        // perturbs similarities below ranking resolution here).
        let pose = *model.poses().nth(3).unwrap();
        let img = extract_slice(&v, &pose, cfg.slice_px, cfg.slice_spacing);
        let a = dictionary_predict(&model, &img, false, 0).unwrap();
        let b = dictionary_predict(&back, &img, false, 0).unwrap();
        assert_eq!(a, b);
    }
}
