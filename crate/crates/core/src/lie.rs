//! Statistics on SE(3): exponential and logarithmic maps from the identity,
//! left-invariant geodesic distance, the Gauss-Newton Riemannian center of
//! mass with its variance, and MAD-based outlier rejection.
//!
//! The squared distance between poses mixes rotation (radians) and
//! translation (mm) as `w_rot * |omega|^2 + w_trans * |nu|^2`; both weights
//! default to 1 and are carried explicitly so results are reproducible.

use crate::se3::{skew, RigidTransform};
use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Angle below which series expansions replace the closed forms. The series
/// carry theta^4 terms, so truncation error stays below 1e-12 at the switch.
const SMALL_ANGLE: f64 = 0.1;
/// Angle above which the rotation log switches to the symmetric-part branch
/// (the skew part is too small there to define the axis reliably).
const NEAR_PI: f64 = std::f64::consts::PI - 1e-6;

/// Tangent vector of SE(3) at the identity.
///
/// `omega` is the rotation part in radians (principal branch, `|omega| <= pi`
/// after a log), `nu` the translation part in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub omega: Vector3<f64>,
    pub nu: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Twist {
            omega: Vector3::zeros(),
            nu: Vector3::zeros(),
        }
    }

    pub fn new(omega: Vector3<f64>, nu: Vector3<f64>) -> Self {
        Twist { omega, nu }
    }

    pub fn scale(&self, s: f64) -> Twist {
        Twist {
            omega: self.omega * s,
            nu: self.nu * s,
        }
    }

    /// Weighted tangent norm, the geodesic length of `exp(t * self)` at t=1.
    pub fn weighted_norm(&self, w: &MetricWeights) -> f64 {
        (w.rotation * self.omega.norm_squared() + w.translation * self.nu.norm_squared()).sqrt()
    }
}

/// Rotation/translation weighting of the left-invariant metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricWeights {
    pub rotation: f64,
    pub translation: f64,
}

impl Default for MetricWeights {
    fn default() -> Self {
        MetricWeights {
            rotation: 1.0,
            translation: 1.0,
        }
    }
}

/// Result of the Riemannian center-of-mass computation.
#[derive(Debug, Clone)]
pub struct ManifoldStats {
    pub mean: RigidTransform,
    /// Mean squared geodesic distance of the sample to the mean.
    pub variance: f64,
    pub n: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Gauss-Newton settings for [`frechet_mean`].
#[derive(Debug, Clone, Copy)]
pub struct FrechetConfig {
    /// Convergence threshold on the weighted norm of the mean update step.
    pub tol: f64,
    pub max_iter: usize,
    pub weights: MetricWeights,
}

impl Default for FrechetConfig {
    fn default() -> Self {
        FrechetConfig {
            tol: 1e-10,
            max_iter: 100,
            weights: MetricWeights::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("cannot compute statistics of an empty sample")]
    EmptyInput,
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Principal-branch rotation vector of an orthonormal matrix, `|omega| <= pi`.
pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let w = vee(&((r - r.transpose()) * 0.5)); // = sin(theta) * axis
    let sin_theta = w.norm();
    // atan2 keeps the angle well-conditioned over the whole range, and
    // scaling the measured skew vector (rather than an acos-derived ratio)
    // avoids the sin(theta) amplification near pi.
    let theta = sin_theta.atan2(cos_theta);

    if theta < NEAR_PI {
        if sin_theta < 1e-12 {
            // theta/sin(theta) -> 1; the skew part already carries the vector
            return w;
        }
        return w * (theta / sin_theta);
    }

    // Near pi the skew part vanishes; recover the axis from the symmetric part
    // via R = I + sin(t) K + (1 - cos(t)) K^2 with K^2 = n n^T - I.
    let s = (r + r.transpose()) * 0.5;
    let nnt = (s - Matrix3::identity() * cos_theta) / (1.0 - cos_theta);
    // Column k of n n^T is n_k * n; the largest diagonal entry gives the
    // best-conditioned column.
    let k = nnt.diagonal().imax();
    let mut axis = nnt.column(k).normalize();
    // Orient with the residual skew part when it is informative; otherwise
    // (theta == pi exactly, where q and -q coincide) pick a canonical sign.
    let dot = axis.dot(&w);
    if dot < 0.0 {
        axis = -axis;
    } else if dot == 0.0 {
        let first = axis.iter().find(|v| **v != 0.0).copied().unwrap_or(1.0);
        if first < 0.0 {
            axis = -axis;
        }
    }
    axis * theta
}

/// Rodrigues exponential of a rotation vector.
pub fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let k = skew(omega);
    let (a, b) = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        (
            1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
        )
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Left Jacobian of SO(3): `V(omega)` with `exp([omega]) t = V(omega) nu` in SE(3).
fn left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let k = skew(omega);
    let (a, b) = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        (
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
            1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0,
        )
    } else {
        let theta = theta2.sqrt();
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() + k * a + k * k * b
}

fn left_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let k = skew(omega);
    // The K^2 coefficient is (1 - (theta/2) cot(theta/2)) / theta^2, which
    // cancels catastrophically below theta ~ 0.1; the series takes over there.
    let c = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30_240.0
    } else {
        let theta = theta2.sqrt();
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / theta2
    };
    Matrix3::identity() - k * 0.5 + k * k * c
}

/// Logarithm from the identity: principal twist with `exp(log(t)) = t`.
pub fn se3_log(t: &RigidTransform) -> Twist {
    let omega = so3_log(&t.rotation);
    let nu = left_jacobian_inv(&omega) * t.translation;
    Twist { omega, nu }
}

/// Exponential from the identity.
pub fn se3_exp(x: &Twist) -> RigidTransform {
    RigidTransform {
        rotation: so3_exp(&x.omega),
        translation: left_jacobian(&x.omega) * x.nu,
    }
}

/// Left-invariant geodesic distance `|log(x^-1 y)|` under the given weights.
pub fn geodesic_distance(x: &RigidTransform, y: &RigidTransform, w: &MetricWeights) -> f64 {
    if x == y {
        return 0.0;
    }
    se3_log(&x.invert().compose(y)).weighted_norm(w)
}

/// Riemannian center of mass by Gauss-Newton fixed-point iteration.
///
/// Starting from the first sample, each step composes the current estimate
/// with the exponential of the tangent-space mean of `log(m^-1 x_i)`. The
/// returned mean satisfies `|mean step| < tol` when `converged` is set;
/// otherwise the caller decides what to do with the unconverged estimate
/// (antipodal spreads legitimately fail to converge). The variance is the
/// mean squared geodesic distance of the sample to the mean.
pub fn frechet_mean(
    xs: &[RigidTransform],
    cfg: &FrechetConfig,
) -> Result<ManifoldStats, StatsError> {
    if xs.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let n = xs.len() as f64;
    let mut mean = xs[0];
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=cfg.max_iter {
        iterations = iter;
        let minv = mean.invert();
        let mut step = Twist::zero();
        for x in xs {
            let l = se3_log(&minv.compose(x));
            step.omega += l.omega;
            step.nu += l.nu;
        }
        let step = step.scale(1.0 / n);
        if step.weighted_norm(&cfg.weights) < cfg.tol {
            converged = true;
            break;
        }
        mean = mean.compose(&se3_exp(&step));
    }

    let variance = xs
        .iter()
        .map(|x| geodesic_distance(&mean, x, &cfg.weights).powi(2))
        .sum::<f64>()
        / n;

    Ok(ManifoldStats {
        mean,
        variance,
        n: xs.len(),
        iterations,
        converged,
    })
}

/// Median of a non-empty slice (mean of the central pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in median"));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 0 {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    }
}

/// Flag values more than `cutoff` scaled median absolute deviations from the median.
///
/// `MAD = k * median(|x_i - median(x)|)`; `k = 1.4826` makes it consistent
/// with the standard deviation under normality. When the MAD degenerates to
/// zero the comparison `|x - median| > 0` still flags every value that
/// differs from the median at all, and nothing when all values are identical.
pub fn mad_outlier_mask(values: &[f64], k: f64, cutoff: f64) -> Vec<bool> {
    assert!(!values.is_empty(), "mad_outlier_mask of empty slice");
    let med = median(values);
    let deviations: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    let mad = k * median(&deviations);
    deviations.iter().map(|d| *d > cutoff * mad).collect()
}

/// Default MAD scale factor (consistency with the normal distribution).
pub const MAD_SCALE_NORMAL: f64 = 1.4826;
/// Default outlier cutoff in scaled MADs.
pub const MAD_DEFAULT_CUTOFF: f64 = 3.0;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{rotation_from_euler, EulerCartesian};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    const TOL: f64 = 1e-9;

    fn rz(angle: f64) -> RigidTransform {
        RigidTransform::new(rotation_from_euler(0.0, 0.0, angle), Vector3::zeros())
    }

    fn random_transform(rng: &mut impl Rng) -> RigidTransform {
        RigidTransform::from_euler(&EulerCartesian {
            rx: rng.random_range(-PI..PI),
            ry: rng.random_range(-PI..PI),
            rz: rng.random_range(-PI..PI),
            tx: rng.random_range(-50.0..50.0),
            ty: rng.random_range(-50.0..50.0),
            tz: rng.random_range(-50.0..50.0),
        })
    }

    fn random_twist(rng: &mut impl Rng, max_angle: f64, max_trans: f64) -> Twist {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let axis = if axis.norm() < 1e-6 { Vector3::x() } else { axis.normalize() };
        let omega = axis * rng.random_range(0.0..max_angle);
        let nu = if max_trans > 0.0 {
            Vector3::new(
                rng.random_range(-max_trans..max_trans),
                rng.random_range(-max_trans..max_trans),
                rng.random_range(-max_trans..max_trans),
            )
        } else {
            Vector3::zeros()
        };
        Twist::new(omega, nu)
    }

    #[test]
    fn log_identity_is_zero() {
        let t = se3_log(&RigidTransform::identity());
        assert!(t.omega.norm() < TOL && t.nu.norm() < TOL);
    }

    #[test]
    fn log_pure_translation() {
        let t = se3_log(&RigidTransform::from_translation(Vector3::new(3.0, 0.0, 0.0)));
        assert!(t.omega.norm() < TOL);
        assert_abs_diff_eq!(t.nu, Vector3::new(3.0, 0.0, 0.0), epsilon = TOL);
    }

    #[test]
    fn log_quarter_turn_z() {
        let t = se3_log(&rz(FRAC_PI_2));
        assert_abs_diff_eq!(t.omega, Vector3::new(0.0, 0.0, FRAC_PI_2), epsilon = TOL);
        assert!(t.nu.norm() < TOL);
    }

    #[test]
    fn exp_zero_is_identity() {
        let t = se3_exp(&Twist::zero());
        assert!((t.rotation - Matrix3::identity()).norm() < TOL);
        assert!(t.translation.norm() < TOL);
    }

    #[test]
    fn exp_half_turn_z() {
        let t = se3_exp(&Twist::new(Vector3::new(0.0, 0.0, PI), Vector3::zeros()));
        let expected = Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        assert_abs_diff_eq!(t.rotation, expected, epsilon = TOL);
    }

    #[test]
    fn exp_pure_translation() {
        let t = se3_exp(&Twist::new(Vector3::zeros(), Vector3::new(1.0, 2.0, 3.0)));
        assert!((t.rotation - Matrix3::identity()).norm() < TOL);
        assert_abs_diff_eq!(t.translation, Vector3::new(1.0, 2.0, 3.0), epsilon = TOL);
    }

    #[test]
    fn exp_log_round_trip_1000() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let x = random_twist(&mut rng, PI - 0.01, 50.0);
            let t = se3_exp(&x);
            let back = se3_log(&t);
            assert!((back.omega - x.omega).norm() < TOL, "omega mismatch at {:?}", x.omega);
            assert!((back.nu - x.nu).norm() < TOL);
            let t2 = se3_exp(&back);
            assert!((t2.rotation - t.rotation).norm() < TOL);
            assert!((t2.translation - t.translation).norm() < TOL);
        }
    }

    #[test]
    fn log_near_pi_branch() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..200 {
            let axis = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            let theta = rng.random_range(PI - 1e-3..PI - 1e-12);
            let r = so3_exp(&(axis * theta));
            let w = so3_log(&r);
            assert!((so3_exp(&w) - r).norm() < 1e-8, "round trip fails at theta={theta}");
            assert!(w.norm() <= PI + TOL);
        }
        // Exactly pi about each basis axis: log must invert even with sign freedom.
        for axis in [Vector3::x(), Vector3::y(), Vector3::z()] {
            let r = so3_exp(&(axis * PI));
            let w = so3_log(&r);
            assert!((so3_exp(&w) - r).norm() < TOL);
            assert_abs_diff_eq!(w.norm(), PI, epsilon = 1e-7);
        }
    }

    #[test]
    fn distance_to_self_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = random_transform(&mut rng);
        assert!(geodesic_distance(&t, &t, &MetricWeights::default()) < TOL);
    }

    #[test]
    fn distance_closed_forms() {
        let w = MetricWeights::default();
        let id = RigidTransform::identity();
        assert_abs_diff_eq!(geodesic_distance(&id, &rz(FRAC_PI_2), &w), FRAC_PI_2, epsilon = TOL);
        let trans = RigidTransform::from_translation(Vector3::new(3.0, 4.0, 0.0));
        assert_abs_diff_eq!(geodesic_distance(&id, &trans, &w), 5.0, epsilon = TOL);
    }

    #[test]
    fn distance_left_invariant_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let w = MetricWeights::default();
        for _ in 0..200 {
            let g = random_transform(&mut rng);
            let x = random_transform(&mut rng);
            let y = random_transform(&mut rng);
            let d = geodesic_distance(&x, &y, &w);
            assert!((geodesic_distance(&g.compose(&x), &g.compose(&y), &w) - d).abs() < TOL);
            assert!((geodesic_distance(&y, &x, &w) - d).abs() < TOL);
        }
    }

    #[test]
    fn frechet_empty_errors() {
        assert_eq!(
            frechet_mean(&[], &FrechetConfig::default()).unwrap_err(),
            StatsError::EmptyInput
        );
    }

    #[test]
    fn frechet_singleton() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_transform(&mut rng);
        let stats = frechet_mean(&[t], &FrechetConfig::default()).unwrap();
        assert!(stats.converged);
        assert_eq!(stats.iterations, 1);
        assert!((stats.mean.rotation - t.rotation).norm() < TOL);
        assert!(stats.variance < TOL);
    }

    #[test]
    fn frechet_duplicated_singleton_one_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_transform(&mut rng);
        let stats = frechet_mean(&[t, t, t], &FrechetConfig::default()).unwrap();
        assert!(stats.converged);
        assert_eq!(stats.iterations, 1);
        assert!((stats.mean.rotation - t.rotation).norm() < TOL);
        assert!((stats.mean.translation - t.translation).norm() < TOL);
    }

    #[test]
    fn frechet_symmetric_pair_midpoint() {
        let theta = 30.0_f64.to_radians();
        let stats = frechet_mean(&[rz(theta), rz(-theta)], &FrechetConfig::default()).unwrap();
        assert!(stats.converged);
        assert!((stats.mean.rotation - Matrix3::identity()).norm() < TOL);
        assert!(stats.mean.translation.norm() < TOL);
        assert_abs_diff_eq!(stats.variance, theta * theta, epsilon = 1e-9);
    }

    #[test]
    fn frechet_left_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let base = random_transform(&mut rng);
        let xs: Vec<RigidTransform> = (0..40)
            .map(|_| base.compose(&se3_exp(&random_twist(&mut rng, 0.2, 5.0))))
            .collect();
        let g = random_transform(&mut rng);
        let translated: Vec<RigidTransform> = xs.iter().map(|x| g.compose(x)).collect();
        let cfg = FrechetConfig::default();
        let a = frechet_mean(&xs, &cfg).unwrap();
        let b = frechet_mean(&translated, &cfg).unwrap();
        let expected = g.compose(&a.mean);
        assert!((b.mean.rotation - expected.rotation).norm() < 1e-6);
        assert!((b.mean.translation - expected.translation).norm() < 1e-6);
        assert!((a.variance - b.variance).abs() < 1e-9);
    }

    #[test]
    fn frechet_pure_rotation_matches_independent_minimizer() {
        // Oracle: seeded shrinking random search over rotation vectors, sharing
        // only the distance function with the implementation under test.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let base = rz(0.4);
        let xs: Vec<RigidTransform> = (0..30)
            .map(|_| base.compose(&se3_exp(&random_twist(&mut rng, 0.1, 0.0))))
            .collect();
        let w = MetricWeights::default();
        let cost = |m: &RigidTransform| -> f64 {
            xs.iter().map(|x| geodesic_distance(m, x, &w).powi(2)).sum()
        };

        let mut best = xs[0];
        let mut best_cost = cost(&best);
        let mut scale = 0.2;
        let mut search_rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..60 {
            for _ in 0..200 {
                let delta = random_twist(&mut search_rng, scale, 0.0);
                let cand = best.compose(&se3_exp(&delta));
                let c = cost(&cand);
                if c < best_cost {
                    best = cand;
                    best_cost = c;
                }
            }
            scale *= 0.7;
        }

        let stats = frechet_mean(&xs, &FrechetConfig::default()).unwrap();
        assert!(stats.converged);
        let gap = geodesic_distance(&stats.mean, &best, &w);
        assert!(gap < 1e-4, "mean deviates from direct minimizer by {gap}");
        assert!(cost(&stats.mean) <= best_cost + 1e-9);
    }

    #[test]
    fn frechet_convergence_flag_is_never_a_silent_lie() {
        // Antipodal spreads may or may not stabilize; whatever is reported,
        // a converged=true result must actually satisfy the fixed-point
        // condition, re-checked here independently of the iteration.
        let rx = |a: f64| {
            RigidTransform::new(rotation_from_euler(a, 0.0, 0.0), Vector3::zeros())
        };
        let ry = |a: f64| {
            RigidTransform::new(rotation_from_euler(0.0, a, 0.0), Vector3::zeros())
        };
        let cfg = FrechetConfig::default();
        let adversarial: Vec<Vec<RigidTransform>> = vec![
            vec![rz(PI), rx(PI), ry(PI)],
            vec![rz(PI - 1e-9), rz(-(PI - 1e-9))],
            vec![rz(0.0), rz(2.4), rz(-2.4)],
            vec![RigidTransform::identity(), rx(PI), ry(PI)],
        ];
        for xs in &adversarial {
            let stats = frechet_mean(xs, &cfg).unwrap();
            if stats.converged {
                let minv = stats.mean.invert();
                let mut step = Twist::zero();
                for x in xs {
                    let l = se3_log(&minv.compose(x));
                    step.omega += l.omega;
                    step.nu += l.nu;
                }
                let step = step.scale(1.0 / xs.len() as f64);
                assert!(
                    step.weighted_norm(&cfg.weights) < cfg.tol,
                    "converged=true but fixed-point condition fails"
                );
            }
        }

        // Exhausting max_iter must report converged=false, not a stale flag.
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let xs: Vec<RigidTransform> = (0..20)
            .map(|_| random_transform(&mut rng))
            .collect();
        let strict = FrechetConfig { tol: 0.0, max_iter: 3, ..Default::default() };
        let stats = frechet_mean(&xs, &strict).unwrap();
        assert!(!stats.converged);
        assert_eq!(stats.iterations, 3);
    }

    #[test]
    fn mad_degenerate_flags_only_differing_value() {
        let mask = mad_outlier_mask(&[1.0, 1.0, 1.0, 1.0, 100.0], MAD_SCALE_NORMAL, 3.0);
        assert_eq!(mask, vec![false, false, false, false, true]);
    }

    #[test]
    fn mad_all_identical_flags_nothing() {
        let mask = mad_outlier_mask(&[5.0; 5], MAD_SCALE_NORMAL, 3.0);
        assert!(mask.iter().all(|m| !m));
    }

    #[test]
    fn mad_flags_single_outlier() {
        let values = [10.0, 12.0, 11.0, 9.0, 10.0, 11.0, 50.0];
        let mask = mad_outlier_mask(&values, MAD_SCALE_NORMAL, 3.0);
        let expected = vec![false, false, false, false, false, false, true];
        assert_eq!(mask, expected);
    }
}
