//! Rigid 3D transforms and the pose-label parameterizations built on them.
//!
//! A slice pose is a rotation plus a translation in mm. Three interchangeable
//! label encodings are provided: Euler-Cartesian (3 angles + 3 offsets),
//! Quaternion-Cartesian (unit quaternion + 3 offsets) and anchor points
//! (three ordered non-collinear 3D points whose order fixes orientation).
//! All conversions round-trip to 1e-9 or better; anchor-point recovery is an
//! exact inverse for noiseless triples.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance for coincident anchor points, scaled by the triangle size.
pub const EPS_COINCIDE_REL: f64 = 1e-6;
/// Relative tolerance for collinear anchor points, scaled by the squared triangle size.
pub const EPS_COLLINEAR_REL: f64 = 1e-6;

/// An element of SE(3): orthonormal rotation plus translation in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Euler-Cartesian pose label: extrinsic XYZ angles in radians, offsets in mm.
///
/// The rotation convention is fixed as `R = Rz(rz) * Ry(ry) * Rx(rx)` and is
/// used consistently by the samplers and label generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerCartesian {
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

/// Quaternion-Cartesian pose label: unit quaternion (w, x, y, z) plus offsets in mm.
///
/// Canonical hemisphere: `qw >= 0`, so `q` and `-q` map to one representative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuaternionCartesian {
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

/// Anchor-point pose label: ordered triple of 3D points in mm.
///
/// On the identity plane the points sit at `(-l, -l, 0)`, the origin and
/// `(l, -l, 0)`; a pose is encoded by transforming all three with it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorPoints {
    pub p1: Vector3<f64>,
    pub p2: Vector3<f64>,
    pub p3: Vector3<f64>,
}

/// Degenerate anchor-point configurations that cannot encode a pose.
#[derive(Debug, Error, PartialEq)]
pub enum AnchorError {
    #[error("anchor points {0} and {1} coincide (distance {2:.3e} below tolerance)")]
    CoincidentPoints(&'static str, &'static str, f64),
    #[error("anchor points are collinear (cross-product norm {0:.3e} below tolerance)")]
    CollinearPoints(f64),
}

/// Normalize an angle to the interval `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

fn basis_rotation_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn basis_rotation_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn basis_rotation_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation matrix for extrinsic XYZ Euler angles: `R = Rz(rz) * Ry(ry) * Rx(rx)`.
pub fn rotation_from_euler(rx: f64, ry: f64, rz: f64) -> Matrix3<f64> {
    basis_rotation_z(rz) * basis_rotation_y(ry) * basis_rotation_x(rx)
}

/// Extract extrinsic XYZ Euler angles from a rotation matrix.
///
/// Inverse of [`rotation_from_euler`] away from gimbal lock (`|ry| = pi/2`);
/// at the lock, `rz` is fixed to 0 and the remaining freedom folded into `rx`.
pub fn euler_from_rotation(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let sy = -r[(2, 0)];
    if sy.abs() < 1.0 - 1e-12 {
        let ry = sy.asin();
        let rx = r[(2, 1)].atan2(r[(2, 2)]);
        let rz = r[(1, 0)].atan2(r[(0, 0)]);
        (rx, ry, rz)
    } else if sy > 0.0 {
        // ry = +pi/2: only rx - rz is determined
        let rx = r[(0, 1)].atan2(r[(0, 2)]);
        (rx, std::f64::consts::FRAC_PI_2, 0.0)
    } else {
        // ry = -pi/2: only rx + rz is determined
        let rx = (-r[(0, 1)]).atan2(-r[(0, 2)]);
        (rx, -std::f64::consts::FRAC_PI_2, 0.0)
    }
}

/// Minimal rotation carrying the direction of `a` onto the direction of `b`.
///
/// Rodrigues rotation about `a x b`. Antiparallel inputs fall back to a 180
/// degree turn about a deterministic axis orthogonal to `a`: the larger of
/// `a x (1,0,0)` and `a x (0,1,0)`.
pub fn rotation_between_vectors(a: &Vector3<f64>, b: &Vector3<f64>) -> Matrix3<f64> {
    assert!(a.norm() > 0.0 && b.norm() > 0.0, "input vectors must be nonzero");
    let an = a.normalize();
    let bn = b.normalize();
    let c = an.dot(&bn);
    if c < -1.0 + 1e-12 {
        let cand_x = an.cross(&Vector3::x());
        let cand_y = an.cross(&Vector3::y());
        let axis = if cand_x.norm() >= cand_y.norm() { cand_x } else { cand_y }.normalize();
        // R(pi) = 2*axis*axis^T - I
        return 2.0 * axis * axis.transpose() - Matrix3::identity();
    }
    let v = an.cross(&bn);
    let vx = skew(&v);
    Matrix3::identity() + vx + vx * vx * (1.0 / (1.0 + c))
}

pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform { rotation, translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_euler(e: &EulerCartesian) -> Self {
        RigidTransform {
            rotation: rotation_from_euler(e.rx, e.ry, e.rz),
            translation: Vector3::new(e.tx, e.ty, e.tz),
        }
    }

    pub fn from_quaternion(q: &QuaternionCartesian) -> Self {
        let uq = UnitQuaternion::from_quaternion(Quaternion::new(q.qw, q.qx, q.qy, q.qz));
        RigidTransform {
            rotation: *uq.to_rotation_matrix().matrix(),
            translation: Vector3::new(q.tx, q.ty, q.tz),
        }
    }

    pub fn to_euler(&self) -> EulerCartesian {
        let (rx, ry, rz) = euler_from_rotation(&self.rotation);
        EulerCartesian {
            rx: normalize_angle(rx),
            ry: normalize_angle(ry),
            rz: normalize_angle(rz),
            tx: self.translation.x,
            ty: self.translation.y,
            tz: self.translation.z,
        }
    }

    pub fn to_quaternion(&self) -> QuaternionCartesian {
        let uq = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
            self.rotation,
        ));
        let q = uq.quaternion();
        let (qw, qx, qy, qz) = canonical_hemisphere(q.w, q.i, q.j, q.k);
        QuaternionCartesian {
            qw,
            qx,
            qy,
            qz,
            tx: self.translation.x,
            ty: self.translation.y,
            tz: self.translation.z,
        }
    }

    /// Group composition: `(self * other)(p) = self(other(p))`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn invert(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Apply to a point: `R p + t`.
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Frobenius orthogonality defect and determinant error of the rotation part.
    pub fn rotation_defect(&self) -> (f64, f64) {
        let gram = self.rotation.transpose() * self.rotation;
        let ortho = (gram - Matrix3::identity()).norm();
        let det = (self.rotation.determinant() - 1.0).abs();
        (ortho, det)
    }

    /// True if the rotation part is orthonormal with det +1 within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let (ortho, det) = self.rotation_defect();
        ortho <= tol && det <= tol
    }
}

/// Map a quaternion to the `qw >= 0` hemisphere representative.
///
/// On the `qw = 0` boundary the sign of the first nonzero vector component
/// breaks the tie, so `q` and `-q` always canonicalize identically.
pub fn canonical_hemisphere(qw: f64, qx: f64, qy: f64, qz: f64) -> (f64, f64, f64, f64) {
    let flip = if qw != 0.0 {
        qw < 0.0
    } else if qx != 0.0 {
        qx < 0.0
    } else if qy != 0.0 {
        qy < 0.0
    } else {
        qz < 0.0
    };
    if flip {
        (-qw, -qx, -qy, -qz)
    } else {
        (qw, qx, qy, qz)
    }
}

impl AnchorPoints {
    /// Identity-plane anchor triple for half-size `l` (mm): bottom-left corner,
    /// center, bottom-right corner.
    pub fn identity_plane(l: f64) -> Self {
        AnchorPoints {
            p1: Vector3::new(-l, -l, 0.0),
            p2: Vector3::zeros(),
            p3: Vector3::new(l, -l, 0.0),
        }
    }

    pub fn as_arrays(&self) -> [[f64; 3]; 3] {
        [self.p1.into(), self.p2.into(), self.p3.into()]
    }

    pub fn from_arrays(p: [[f64; 3]; 3]) -> Self {
        AnchorPoints {
            p1: Vector3::from(p[0]),
            p2: Vector3::from(p[1]),
            p3: Vector3::from(p[2]),
        }
    }
}

/// Transform the identity-plane anchor triple of scale `l` by `t`.
pub fn anchor_points_from_transform(t: &RigidTransform, l: f64) -> AnchorPoints {
    let id = AnchorPoints::identity_plane(l);
    AnchorPoints {
        p1: t.apply(&id.p1),
        p2: t.apply(&id.p2),
        p3: t.apply(&id.p3),
    }
}

/// Recover the pose encoded by an anchor-point triple.
///
/// The translation is `p2`. The rotation columns are the orthonormalized frame
/// X = v1_hat with v1 = p3 - p1, Z = n1_hat with n1 = v1 x v2 and v2 = p2 - p1,
/// and Y = Z x X. Normalization order (v1, then n1, then their cross) keeps the
/// frame right-handed and orthonormal even for noisy, non-isosceles triples.
/// For triples produced by [`anchor_points_from_transform`] this is an exact
/// inverse, independent of the triangle scale `l`.
pub fn transform_from_anchor_points(a: &AnchorPoints) -> Result<RigidTransform, AnchorError> {
    let d12 = (a.p2 - a.p1).norm();
    let d23 = (a.p3 - a.p2).norm();
    let d13 = (a.p3 - a.p1).norm();
    let scale = d12.max(d23).max(d13);
    let eps_coincide = EPS_COINCIDE_REL * scale;
    if d12 <= eps_coincide {
        return Err(AnchorError::CoincidentPoints("p1", "p2", d12));
    }
    if d23 <= eps_coincide {
        return Err(AnchorError::CoincidentPoints("p2", "p3", d23));
    }
    if d13 <= eps_coincide {
        return Err(AnchorError::CoincidentPoints("p1", "p3", d13));
    }

    let v1 = a.p3 - a.p1;
    let v2 = a.p2 - a.p1;
    let n1 = v1.cross(&v2);
    if n1.norm() <= EPS_COLLINEAR_REL * scale * scale {
        return Err(AnchorError::CollinearPoints(n1.norm()));
    }

    let x = v1.normalize();
    let z = n1.normalize();
    let y = z.cross(&x);
    Ok(RigidTransform {
        rotation: Matrix3::from_columns(&[x, y, z]),
        translation: a.p2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4, FRAC_PI_6, PI};

    const TOL: f64 = 1e-9;

    pub(crate) fn random_transform(rng: &mut impl Rng) -> RigidTransform {
        let e = EulerCartesian {
            rx: rng.random_range(-PI..PI),
            ry: rng.random_range(-PI..PI),
            rz: rng.random_range(-PI..PI),
            tx: rng.random_range(-50.0..50.0),
            ty: rng.random_range(-50.0..50.0),
            tz: rng.random_range(-50.0..50.0),
        };
        RigidTransform::from_euler(&e)
    }

    #[test]
    fn rotation_from_euler_identity() {
        assert_abs_diff_eq!(rotation_from_euler(0.0, 0.0, 0.0), Matrix3::identity(), epsilon = TOL);
    }

    #[test]
    fn rotation_from_euler_quarter_turn_z() {
        let r = rotation_from_euler(0.0, 0.0, FRAC_PI_2);
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_abs_diff_eq!(r, expected, epsilon = TOL);
    }

    #[test]
    fn rotation_from_euler_matches_direct_products() {
        // Independent route: multiply hand-written basis matrices entry by entry.
        let (rx, ry, rz) = (FRAC_PI_6, -FRAC_PI_4, FRAC_PI_3);
        let (sx, cx) = (rx.sin(), rx.cos());
        let (sy, cy) = (ry.sin(), ry.cos());
        let (sz, cz) = (rz.sin(), rz.cos());
        let mx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
        let my = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
        let mz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
        let expected = mz * my * mx;
        assert_abs_diff_eq!(rotation_from_euler(rx, ry, rz), expected, epsilon = TOL);
    }

    #[test]
    fn rotation_between_identity_case() {
        let z = Vector3::z();
        assert_abs_diff_eq!(rotation_between_vectors(&z, &z), Matrix3::identity(), epsilon = TOL);
    }

    #[test]
    fn rotation_between_z_and_x() {
        // 90 degrees about y; columns from Rodrigues by hand.
        let r = rotation_between_vectors(&Vector3::z(), &Vector3::x());
        let expected = Matrix3::from_columns(&[
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
        ]);
        assert_abs_diff_eq!(r, expected, epsilon = TOL);
        assert_abs_diff_eq!(r * Vector3::z(), Vector3::x(), epsilon = TOL);
    }

    #[test]
    fn rotation_between_antiparallel() {
        let a = Vector3::z();
        let r = rotation_between_vectors(&a, &-a);
        assert_abs_diff_eq!(r * a, -a, epsilon = TOL);
        let t = RigidTransform::new(r, Vector3::zeros());
        assert!(t.is_valid(TOL));
    }

    #[test]
    fn rotation_between_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let a = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let b = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if a.norm() < 1e-3 || b.norm() < 1e-3 {
                continue;
            }
            let r = rotation_between_vectors(&a, &b);
            assert!((r * a.normalize() - b.normalize()).norm() < TOL);
        }
    }

    #[test]
    fn anchor_points_identity_paper_values() {
        let a = anchor_points_from_transform(&RigidTransform::identity(), 120.0);
        assert_abs_diff_eq!(a.p1, Vector3::new(-120.0, -120.0, 0.0), epsilon = TOL);
        assert_abs_diff_eq!(a.p2, Vector3::zeros(), epsilon = TOL);
        assert_abs_diff_eq!(a.p3, Vector3::new(120.0, -120.0, 0.0), epsilon = TOL);
    }

    #[test]
    fn anchor_points_pure_translation() {
        let t = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 40.0));
        let a = anchor_points_from_transform(&t, 120.0);
        assert_abs_diff_eq!(a.p1, Vector3::new(-120.0, -120.0, 40.0), epsilon = TOL);
        assert_abs_diff_eq!(a.p2, Vector3::new(0.0, 0.0, 40.0), epsilon = TOL);
        assert_abs_diff_eq!(a.p3, Vector3::new(120.0, -120.0, 40.0), epsilon = TOL);
    }

    #[test]
    fn anchor_points_quarter_turn() {
        let t = RigidTransform::new(rotation_from_euler(0.0, 0.0, FRAC_PI_2), Vector3::zeros());
        let a = anchor_points_from_transform(&t, 1.0);
        assert_abs_diff_eq!(a.p1, Vector3::new(1.0, -1.0, 0.0), epsilon = TOL);
        assert_abs_diff_eq!(a.p2, Vector3::zeros(), epsilon = TOL);
        assert_abs_diff_eq!(a.p3, Vector3::new(1.0, 1.0, 0.0), epsilon = TOL);
    }

    #[test]
    fn recovery_identity_triple() {
        let a = AnchorPoints {
            p1: Vector3::new(-1.0, -1.0, 0.0),
            p2: Vector3::zeros(),
            p3: Vector3::new(1.0, -1.0, 0.0),
        };
        let t = transform_from_anchor_points(&a).unwrap();
        assert_abs_diff_eq!(t.rotation, Matrix3::identity(), epsilon = TOL);
        assert_abs_diff_eq!(t.translation, Vector3::zeros(), epsilon = TOL);
    }

    #[test]
    fn recovery_quarter_turn_frame() {
        let a = AnchorPoints {
            p1: Vector3::new(1.0, -1.0, 0.0),
            p2: Vector3::zeros(),
            p3: Vector3::new(1.0, 1.0, 0.0),
        };
        let t = transform_from_anchor_points(&a).unwrap();
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_abs_diff_eq!(t.rotation, expected, epsilon = TOL);
    }

    #[test]
    fn recovery_rejects_coincident_points() {
        let a = AnchorPoints {
            p1: Vector3::new(1.0, 2.0, 3.0),
            p2: Vector3::new(1.0, 2.0, 3.0),
            p3: Vector3::new(4.0, 5.0, 6.0),
        };
        match transform_from_anchor_points(&a) {
            Err(AnchorError::CoincidentPoints("p1", "p2", _)) => {}
            other => panic!("expected coincident-point error, got {other:?}"),
        }
    }

    #[test]
    fn recovery_rejects_collinear_points() {
        let a = AnchorPoints {
            p1: Vector3::new(0.0, 0.0, 0.0),
            p2: Vector3::new(1.0, 1.0, 1.0),
            p3: Vector3::new(2.0, 2.0, 2.0),
        };
        assert!(matches!(
            transform_from_anchor_points(&a),
            Err(AnchorError::CollinearPoints(_))
        ));
    }

    #[test]
    fn anchor_round_trip_1000_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let t = random_transform(&mut rng);
            let l = rng.random_range(0.5..200.0);
            let a = anchor_points_from_transform(&t, l);
            let back = transform_from_anchor_points(&a).unwrap();
            assert!((back.rotation - t.rotation).norm() < TOL);
            assert!((back.translation - t.translation).norm() < TOL);
        }
    }

    #[test]
    fn recovery_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let t = random_transform(&mut rng);
            let a1 = transform_from_anchor_points(&anchor_points_from_transform(&t, 60.0)).unwrap();
            let a2 = transform_from_anchor_points(&anchor_points_from_transform(&t, 120.0)).unwrap();
            assert!((a1.rotation - a2.rotation).norm() < TOL);
            assert!((a1.translation - a2.translation).norm() < TOL);
        }
    }

    #[test]
    fn rigid_congruence_of_generated_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let id = AnchorPoints::identity_plane(120.0);
        for _ in 0..100 {
            let t = random_transform(&mut rng);
            let a = anchor_points_from_transform(&t, 120.0);
            assert!(((a.p1 - a.p2).norm() - (id.p1 - id.p2).norm()).abs() < 1e-9);
            assert!(((a.p2 - a.p3).norm() - (id.p2 - id.p3).norm()).abs() < 1e-9);
            assert!(((a.p1 - a.p3).norm() - (id.p1 - id.p3).norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn compose_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random_transform(&mut rng);
        let id = RigidTransform::identity();
        let c = id.compose(&t);
        assert_abs_diff_eq!(c.rotation, t.rotation, epsilon = TOL);
        assert_abs_diff_eq!(c.translation, t.translation, epsilon = TOL);
        let round = t.compose(&t.invert());
        assert!((round.rotation - Matrix3::identity()).norm() < TOL);
        assert!(round.translation.norm() < TOL);
    }

    #[test]
    fn invert_pure_translation() {
        let t = RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0));
        let inv = t.invert();
        assert_abs_diff_eq!(inv.translation, Vector3::new(-1.0, -2.0, -3.0), epsilon = TOL);
        assert_abs_diff_eq!(inv.rotation, Matrix3::identity(), epsilon = TOL);
    }

    #[test]
    fn quaternion_quarter_turn_z() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let q = QuaternionCartesian {
            qw: s,
            qx: 0.0,
            qy: 0.0,
            qz: s,
            tx: 0.0,
            ty: 0.0,
            tz: 0.0,
        };
        let t = RigidTransform::from_quaternion(&q);
        assert_abs_diff_eq!(t.rotation, rotation_from_euler(0.0, 0.0, FRAC_PI_2), epsilon = TOL);
        let back = t.to_quaternion();
        assert_abs_diff_eq!(back.qw, s, epsilon = TOL);
        assert_abs_diff_eq!(back.qz, s, epsilon = TOL);
    }

    #[test]
    fn parameterization_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..500 {
            let t = random_transform(&mut rng);
            let te = RigidTransform::from_euler(&t.to_euler());
            assert!((te.rotation - t.rotation).norm() < TOL);
            assert!((te.translation - t.translation).norm() < TOL);
            let tq = RigidTransform::from_quaternion(&t.to_quaternion());
            assert!((tq.rotation - t.rotation).norm() < TOL);
            assert!((tq.translation - t.translation).norm() < TOL);
        }
    }

    #[test]
    fn hemisphere_canonicalization_is_sign_invariant() {
        let cases = [
            (0.5, -0.5, 0.5, -0.5),
            (0.0, 0.3, -0.4, 0.5),
            (0.0, 0.0, 1.0, 0.0),
            (0.0, 0.0, 0.0, -1.0),
        ];
        for (w, x, y, z) in cases {
            let a = canonical_hemisphere(w, x, y, z);
            let b = canonical_hemisphere(-w, -x, -y, -z);
            assert_eq!(a, b);
            assert!(a.0 >= 0.0);
        }
    }

    #[test]
    fn angle_normalization_bounds() {
        assert_abs_diff_eq!(normalize_angle(PI), PI, epsilon = TOL);
        assert_abs_diff_eq!(normalize_angle(-PI), PI, epsilon = TOL);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI), PI, epsilon = TOL);
        assert_abs_diff_eq!(normalize_angle(-FRAC_PI_2), -FRAC_PI_2, epsilon = TOL);
    }
}
