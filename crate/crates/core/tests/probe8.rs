use svr_core::lie::{geodesic_distance, MetricWeights};
use svr_core::phantom::{make_phantom, PhantomKind};
use svr_core::predictor::{build_dictionary, dictionary_predict, Similarity};
use svr_core::sampler::{random_validation_transforms, SamplingConfig, SchemeParams, TzRange};
use svr_core::volume::extract_slice;
use rayon::prelude::*;


#[test]
fn probe_capture_range() {
    let start = std::time::Instant::now();
    let v = make_phantom(PhantomKind::Sinusoid, 64, 1.0, 2024);
    let tz = TzRange { min: -20.0, max: 20.0, step: 4.0 };
    let cfg = SamplingConfig {
        scheme: SchemeParams::EulerGrid { angle_step: 18f64.to_radians() },
        tz,
        seed: 0,
        slice_px: 64,
        slice_spacing: 1.0,
        anchor_scale: None,
        min_content: 0.05,
    };
    let dsize: usize = std::env::var("PROBE_DSIZE").map(|s| s.parse().unwrap()).unwrap_or(32);
    let model = build_dictionary(&v, &cfg, dsize, Similarity::Cc).unwrap();
    eprintln!("dict entries: {} (build {:?})", model.len(), start.elapsed());

    let poses: Vec<svr_core::se3::RigidTransform> = {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        (0..500)
            .map(|_| {
                let e = svr_core::se3::EulerCartesian {
                    rx: rng.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2),
                    ry: rng.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2),
                    rz: rng.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2),
                    tx: 0.0, ty: 0.0, tz: 0.0,
                };
                let rot = svr_core::se3::rotation_from_euler(e.rx, e.ry, e.rz);
                let tzv: f64 = rng.random_range(-20.0..20.0);
                let normal = rot * nalgebra::Vector3::z();
                svr_core::se3::RigidTransform::new(rot, normal * tzv)
            })
            .collect()
    };
    let w = MetricWeights::default();
    let dict_poses: Vec<_> = model.poses().cloned().collect();
    let results: Vec<(f64, f64)> = poses
        .par_iter()
        .map(|truth| {
            let img = extract_slice(&v, truth, 64, 1.0);
            let pred = dictionary_predict(&model, &img, false, 0).unwrap();
            let err = geodesic_distance(&pred, truth, &w);
            let oracle = dict_poses
                .iter()
                .map(|p| geodesic_distance(p, truth, &w))
                .fold(f64::INFINITY, f64::min);
            (err, oracle)
        })
        .collect();
    let matches = results.iter().filter(|(e, o)| *e <= o + 1e-9).count();
    let mut ratios: Vec<f64> = results
        .iter()
        .filter(|(e, o)| *e > o + 1e-9)
        .map(|(e, o)| e / o.max(1e-12))
        .collect();
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if !ratios.is_empty() {
        eprintln!(
            "mismatch err/oracle ratio: p25 {:.3} p50 {:.3} p90 {:.3} max {:.3}",
            ratios[ratios.len() / 4],
            ratios[ratios.len() / 2],
            ratios[ratios.len() * 9 / 10],
            ratios[ratios.len() - 1]
        );
    }
    let mut errs: Vec<f64> = results.iter().map(|(e, _)| *e).collect();
    let mut oracles: Vec<f64> = results.iter().map(|(_, o)| *o).collect();
    errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    oracles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eprintln!(
        "match fraction {}/500 = {:.3}; median err {:.4}; oracle median {:.4} p90 {:.4}; total {:?}",
        matches, matches as f64 / 500.0, errs[250], oracles[250], oracles[450], start.elapsed()
    );
    assert!(results.iter().all(|(e, o)| *e >= o - 1e-9), "predictor beat its grid");
}
