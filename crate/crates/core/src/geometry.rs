//! Continuous 6DoF poses, rigid transforms and pose error metrics.
//!
//! Rotations follow the yaw-pitch-roll convention: `R = Rz(yaw) * Ry(pitch) * Rx(roll)`
//! acting on column vectors. Angles are radians everywhere in the library.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

/// A point in meters.
pub type Point3 = nalgebra::Point3<f64>;

/// Sensor pose: translation in meters plus roll/pitch/yaw in radians.
///
/// Yaw is kept normalized to `[0, 2π)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose6 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Pose6 {
    pub fn new(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            z,
            roll,
            pitch,
            yaw: normalize_yaw(yaw),
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn to_transform(&self) -> Transform {
        pose_to_transform(self)
    }
}

impl Default for Pose6 {
    fn default() -> Self {
        Self::identity()
    }
}

/// Maps any finite angle into `[0, 2π)`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let y = yaw.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if y >= TAU {
        0.0
    } else {
        y
    }
}

/// Rigid transform `p -> R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    #[inline]
    pub fn apply(&self, p: &Point3) -> Point3 {
        transform_point(self, p)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Transform) -> Transform {
        Transform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Transform {
        let rt = self.rotation.transpose();
        Transform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Homogeneous 4x4 matrix, row-major when read as `m[(row, col)]`.
    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// Rotation `Rz(yaw) * Ry(pitch) * Rx(roll)` and translation `(x, y, z)`.
pub fn pose_to_transform(p: &Pose6) -> Transform {
    Transform {
        rotation: rpy_to_rotation(p.roll, p.pitch, p.yaw),
        translation: p.translation(),
    }
}

pub fn rpy_to_rotation(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// `R p + t`, evaluated row by row in a fixed order.
///
/// The branch-and-bound search and the exhaustive oracle both depend on this
/// exact floating-point evaluation order.
#[inline]
pub fn transform_point(t: &Transform, p: &Point3) -> Point3 {
    let r = rotate(&t.rotation, p);
    Point3::new(
        r[0] + t.translation.x,
        r[1] + t.translation.y,
        r[2] + t.translation.z,
    )
}

/// `R p` with the same evaluation order as [`transform_point`].
#[inline]
pub fn rotate(r: &Matrix3<f64>, p: &Point3) -> [f64; 3] {
    [
        r[(0, 0)] * p.x + r[(0, 1)] * p.y + r[(0, 2)] * p.z,
        r[(1, 0)] * p.x + r[(1, 1)] * p.y + r[(1, 2)] * p.z,
        r[(2, 0)] * p.x + r[(2, 1)] * p.y + r[(2, 2)] * p.z,
    ]
}

/// Geodesic angle of `R_a^T R_b`, in `[0, π]`.
pub fn rotation_error(a: &Pose6, b: &Pose6) -> f64 {
    if (a.roll, a.pitch, a.yaw) == (b.roll, b.pitch, b.yaw) {
        return 0.0;
    }
    let ra = rpy_to_rotation(a.roll, a.pitch, a.yaw);
    let rb = rpy_to_rotation(b.roll, b.pitch, b.yaw);
    rotation_angle(&(ra.transpose() * rb))
}

/// Rotation angle of a rotation matrix.
///
/// Uses `atan2(sin, cos)` rather than `acos` to stay accurate near zero.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let cos = (r.trace() - 1.0) * 0.5;
    let sin = 0.5
        * Vector3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        )
        .norm();
    sin.atan2(cos)
}

pub fn translation_error(a: &Pose6, b: &Pose6) -> f64 {
    (a.translation() - b.translation()).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn axis_x(a: f64) -> Matrix3<f64> {
        let (s, c) = a.sin_cos();
        Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
    }
    fn axis_y(a: f64) -> Matrix3<f64> {
        let (s, c) = a.sin_cos();
        Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
    }
    fn axis_z(a: f64) -> Matrix3<f64> {
        let (s, c) = a.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    /// Independent route: compose single-axis matrices.
    fn oracle_rotation(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
        axis_z(yaw) * axis_y(pitch) * axis_x(roll)
    }

    #[test]
    fn identity_pose_gives_identity_transform() {
        let t = pose_to_transform(&Pose6::identity());
        assert_eq!(t.rotation, Matrix3::identity());
        assert_eq!(t.translation, Vector3::zeros());
    }

    #[test]
    fn quarter_turn_about_z() {
        let t = pose_to_transform(&Pose6::new(0.0, 0.0, 0.0, 0.0, 0.0, FRAC_PI_2));
        let q = t.apply(&Point3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(q.x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.y, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.z, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn composed_rotation_matches_axis_product() {
        let p = Pose6::new(1.0, 2.0, 3.0, 0.01, -0.02, 1.0);
        let t = pose_to_transform(&p);
        let expected = oracle_rotation(0.01, -0.02, 1.0);
        assert!((t.rotation - expected).abs().max() < 1e-15);
        assert_eq!(t.translation, Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn transform_point_examples() {
        let id = Transform::identity();
        assert_eq!(
            id.apply(&Point3::new(5.0, -1.0, 2.0)),
            Point3::new(5.0, -1.0, 2.0)
        );
        let tr = Transform::from_translation(Vector3::new(1.0, 1.0, 1.0));
        assert_eq!(tr.apply(&Point3::origin()), Point3::new(1.0, 1.0, 1.0));
    }

    #[test]
    fn rotation_error_examples() {
        let a = Pose6::new(1.0, 2.0, 3.0, 0.005, -0.003, 2.0);
        assert_eq!(rotation_error(&a, &a), 0.0);
        let mut b = a;
        b.yaw += 0.04;
        assert_abs_diff_eq!(rotation_error(&a, &b), 0.04, epsilon = 1e-9);
    }

    #[test]
    fn translation_error_examples() {
        let a = Pose6::identity();
        assert_eq!(translation_error(&a, &a), 0.0);
        let b = Pose6::new(1.0, 2.0, 2.0, 0.0, 0.0, 0.0);
        assert_eq!(translation_error(&a, &b), 3.0);
    }

    #[test]
    fn yaw_normalization() {
        assert_eq!(normalize_yaw(-1e-300), 0.0);
        assert_abs_diff_eq!(normalize_yaw(-FRAC_PI_2), 1.5 * PI, epsilon = 1e-15);
        assert_abs_diff_eq!(normalize_yaw(TAU + 0.5), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn inverse_and_compose() {
        let t = pose_to_transform(&Pose6::new(3.0, -2.0, 1.0, 0.1, 0.2, 0.3));
        let id = t.compose(&t.inverse());
        assert!((id.rotation - Matrix3::identity()).abs().max() < 1e-14);
        assert!(id.translation.norm() < 1e-14);
        let m = t.to_matrix4();
        assert_eq!(m[(0, 3)], 3.0);
        assert_eq!(m[(3, 3)], 1.0);
    }

    fn pose_strategy() -> impl Strategy<Value = Pose6> {
        (
            -100.0..100.0f64,
            -100.0..100.0f64,
            -100.0..100.0f64,
            -PI..PI,
            -1.5..1.5f64,
            -10.0..10.0f64,
        )
            .prop_map(|(x, y, z, r, p, w)| Pose6::new(x, y, z, r, p, w))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn origin_maps_to_translation(p in pose_strategy()) {
            let q = pose_to_transform(&p).apply(&Point3::origin());
            prop_assert_eq!(q, Point3::new(p.x, p.y, p.z));
        }

        #[test]
        fn rotations_are_orthonormal(p in pose_strategy()) {
            let r = pose_to_transform(&p).rotation;
            prop_assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn rotation_error_matches_trace_formula(a in pose_strategy(), b in pose_strategy()) {
            let r = oracle_rotation(a.roll, a.pitch, a.yaw).transpose()
                * oracle_rotation(b.roll, b.pitch, b.yaw);
            let expected = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            let got = rotation_error(&a, &b);
            prop_assert!((0.0..=PI).contains(&got));
            // acos loses precision close to 0 and π
            prop_assume!(expected > 1e-3 && expected < PI - 1e-3);
            prop_assert!((got - expected).abs() < 1e-9);
        }

        #[test]
        fn rotation_error_is_a_metric(a in pose_strategy(), b in pose_strategy(), c in pose_strategy()) {
            prop_assert_eq!(rotation_error(&a, &a), 0.0);
            prop_assert!((rotation_error(&a, &b) - rotation_error(&b, &a)).abs() < 1e-12);
            prop_assert!(rotation_error(&a, &c) <= rotation_error(&a, &b) + rotation_error(&b, &c) + 1e-9);
        }

        #[test]
        fn translation_error_matches_norm(a in pose_strategy(), b in pose_strategy()) {
            let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
            let expected = (dx * dx + dy * dy + dz * dz).sqrt();
            prop_assert!((translation_error(&a, &b) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn orthonormality_over_many_random_poses() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100_000 {
            let p = Pose6::new(
                0.0,
                0.0,
                0.0,
                rng.gen_range(-PI..PI),
                rng.gen_range(-PI..PI),
                rng.gen_range(-PI..PI),
            );
            let r = pose_to_transform(&p).rotation;
            assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-9);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
    }
}
