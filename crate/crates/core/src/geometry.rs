//! Rigid-body algebra on SE(3) restricted to what the servo loop needs.
//!
//! Rotations are plain 3×3 matrices. The conventions throughout the crate:
//!
//! * `a.compose(&b)` is `a ∘ b`: apply `b`, then `a`.
//! * A pose named `x_in_y` maps coordinates expressed in frame `x` into frame `y`.
//! * Twists are body-frame velocities of the current camera.

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Below this `sin θ` the log map falls back to the first-order series.
const SMALL_SIN: f64 = 1e-7;
/// Within this distance of π the log map reads the axis off `(R + I) / 2`.
const NEAR_PI: f64 = 1e-6;

#[inline]
pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

#[inline]
fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
}

/// Gram-Schmidt on the columns, keeping the first column's direction.
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let c0 = r.column(0).normalize();
    let c1 = r.column(1) - c0 * c0.dot(&r.column(1));
    let c1 = c1.normalize();
    let c2 = c0.cross(&c1);
    Matrix3::from_columns(&[c0, c1, c2])
}

pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation vector `θu`: direction is the axis, norm is the angle in `[0, π]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisAngle(pub Vector3<f64>);

impl AxisAngle {
    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn vector(&self) -> Vector3<f64> {
        self.0
    }

    pub fn to_rotation(&self) -> Matrix3<f64> {
        axis_angle_to_rotation(&self.0)
    }
}

/// Rodrigues' formula.
pub fn axis_angle_to_rotation(theta_u: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = theta_u.norm_squared();
    let k = skew(theta_u);
    let (a, b) = if theta2 < 1e-12 {
        // Taylor terms of sin θ / θ and (1 - cos θ) / θ²
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Log map of SO(3).
///
/// Uses the first-order series when `sin θ < 1e-7` near zero, and extracts the
/// axis from the dominant diagonal entry of `(R + I) / 2` when θ is within
/// 1e-6 of π, where the antisymmetric part carries no usable information.
pub fn rotation_to_axis_angle(r: &Matrix3<f64>) -> AxisAngle {
    let w = vee(r);
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin_theta = (0.5 * w.norm()).min(1.0);
    let theta = sin_theta.atan2(cos_theta);

    if theta < std::f64::consts::FRAC_PI_2 && sin_theta < SMALL_SIN {
        return AxisAngle(w * 0.5);
    }
    if std::f64::consts::PI - theta < NEAR_PI {
        let b = (r + r.transpose()) * 0.25 + Matrix3::identity() * 0.5;
        let k = (0..3)
            .max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]))
            .unwrap_or(0);
        let mut axis: Vector3<f64> = b.column(k) / b[(k, k)].max(0.0).sqrt();
        axis.normalize_mut();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        return AxisAngle(axis * theta);
    }
    AxisAngle(w * (theta / (2.0 * sin_theta)))
}

/// Rigid transform `[R t; 0 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    pub fn from_rotation(r: Matrix3<f64>) -> Self {
        Self::new(r, Vector3::zeros())
    }

    /// `self ∘ other`, with the rotation re-orthonormalized.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: orthonormalize(&(self.rotation * other.rotation)),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Row-major rotation followed by translation.
    pub fn to_array(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
            t.x, t.y, t.z,
        ]
    }

    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `^{c*}T_c = (^oT_{c*})⁻¹ ∘ ^oT_c`, both poses in the same base frame.
pub fn relative_pose(desired: &Pose, current: &Pose) -> Pose {
    desired.inverse().compose(current)
}

/// Rotation error (rad) and translation error (m) of a relative pose.
pub fn pose_errors(rel: &Pose) -> (f64, f64) {
    (rotation_to_axis_angle(&rel.rotation).angle(), rel.translation.norm())
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    r: [f64; 9],
    t: [f64; 3],
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let a = self.to_array();
        let mut r = [0.0; 9];
        r.copy_from_slice(&a[..9]);
        PoseRepr {
            r,
            t: [a[9], a[10], a[11]],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(deserializer)?;
        Ok(Pose {
            rotation: Matrix3::from_row_slice(&repr.r),
            translation: Vector3::from(repr.t),
        })
    }
}

/// Camera velocity `(v, ω)` in the current camera frame (m/s, rad/s).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), 6, "twist needs six components");
        Self {
            linear: Vector3::new(v[0], v[1], v[2]),
            angular: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        ]
    }

    pub fn scale(&self, k: f64) -> Twist {
        Twist::new(self.linear * k, self.angular * k)
    }

    /// Componentwise clamp to `[-limit, limit]`.
    pub fn clamped(&self, limit: f64) -> Twist {
        Twist::new(
            self.linear.map(|x| x.clamp(-limit, limit)),
            self.angular.map(|x| x.clamp(-limit, limit)),
        )
    }

    /// Uniformly scaled so the largest component is at most `limit`;
    /// the direction is unchanged.
    pub fn saturated(&self, limit: f64) -> Twist {
        let m = self.max_abs();
        if m <= limit {
            *self
        } else {
            // the clamp only absorbs the rounding of `limit / m`
            self.scale(limit / m).clamped(limit)
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

impl fmt::Display for Twist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.to_array();
        write!(
            f,
            "v=({:.5}, {:.5}, {:.5}) w=({:.5}, {:.5}, {:.5})",
            a[0], a[1], a[2], a[3], a[4], a[5]
        )
    }
}

/// Exact SE(3) exponential of a constant body twist held for `dt`: `p ∘ exp(dt·ξ)`.
pub fn integrate_twist(p: &Pose, v: &Twist, dt: f64) -> Pose {
    let w = v.angular * dt;
    let theta2 = w.norm_squared();
    let k = skew(&w);
    let (b, c) = if theta2 < 1e-12 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    let left_jacobian = Matrix3::identity() + k * b + k * k * c;
    let step = Pose::new(axis_angle_to_rotation(&w), left_jacobian * (v.linear * dt));
    p.compose(&step)
}

/// Decoupled SO(3) × R³ step: the camera center moves along `R·v` for `dt`
/// while the orientation turns by `exp(dt·ω)` about the camera center.
pub fn integrate_twist_decoupled(p: &Pose, v: &Twist, dt: f64) -> Pose {
    Pose {
        rotation: orthonormalize(&(p.rotation * axis_angle_to_rotation(&(v.angular * dt)))),
        translation: p.translation + p.rotation * (v.linear * dt),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_rotation(rng: &mut impl Rng, min: f64, max: f64) -> (Vector3<f64>, Matrix3<f64>) {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let theta = rng.random_range(min..max);
        let tu = axis * theta;
        (tu, axis_angle_to_rotation(&tu))
    }

    fn random_pose(rng: &mut impl Rng) -> Pose {
        let (_, r) = random_rotation(rng, 0.0, PI);
        Pose::new(
            r,
            Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ),
        )
    }

    #[test]
    fn compose_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let p = random_pose(&mut rng);
            assert!(Pose::identity().compose(&p).max_abs_diff(&p) < 1e-12);
            assert!(p.compose(&p.inverse()).max_abs_diff(&Pose::identity()) < 1e-9);
            assert!(p.inverse().inverse().max_abs_diff(&p) < 1e-12);
            assert!(relative_pose(&p, &p).max_abs_diff(&Pose::identity()) < 1e-9);
            let q = random_pose(&mut rng);
            assert!(p.compose(&relative_pose(&p, &q)).max_abs_diff(&q) < 1e-9);
        }
    }

    #[test]
    fn rotation_closure() {
        let a = Pose::from_rotation(rot_z(FRAC_PI_2));
        let c = a.compose(&a);
        assert!(c.max_abs_diff(&Pose::from_rotation(rot_z(PI))) < 1e-12);
    }

    #[test]
    fn inverse_pure_translation() {
        let p = Pose::from_translation(Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(p.inverse().translation, Vector3::new(-1.0, -2.0, -3.0));
        assert_eq!(Pose::identity().inverse(), Pose::identity());
    }

    #[test]
    fn relative_pose_reduces_to_subtraction() {
        let desired = Pose::identity();
        let current = Pose::from_translation(Vector3::new(0.0, 0.0, 0.15));
        let rel = relative_pose(&desired, &current);
        assert!((rel.translation - Vector3::new(0.0, 0.0, 0.15)).norm() < 1e-15);
    }

    #[test]
    fn log_canonical_cases() {
        assert_eq!(rotation_to_axis_angle(&Matrix3::identity()).0, Vector3::zeros());
        let z = rotation_to_axis_angle(&rot_z(FRAC_PI_2)).0;
        assert!((z - Vector3::new(0.0, 0.0, FRAC_PI_2)).norm() < 1e-12);
        let x = rotation_to_axis_angle(&rot_x(PI)).0;
        assert!((x - Vector3::new(PI, 0.0, 0.0)).norm() < 1e-12);
        let y = rotation_to_axis_angle(&rot_y(PI)).0;
        assert!((y - Vector3::new(0.0, PI, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn log_is_continuous_near_zero() {
        let tu = Vector3::new(1e-9, -2e-9, 3e-9);
        let back = rotation_to_axis_angle(&axis_angle_to_rotation(&tu)).0;
        assert!((back - tu).norm() < 1e-15);
    }

    #[test]
    fn log_near_pi_branch() {
        let axis = Vector3::new(1.0, 2.0, -0.5).normalize();
        let tu = axis * (PI - 1e-8);
        let r = axis_angle_to_rotation(&tu);
        let back = rotation_to_axis_angle(&r);
        assert!((back.angle() - (PI - 1e-8)).abs() < 1e-7);
        assert!((axis_angle_to_rotation(&back.0) - r).abs().max() < 1e-9);
    }

    #[test]
    fn axis_angle_round_trip_1000() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let (_, r) = random_rotation(&mut rng, 1e-4, PI - 1e-4);
            let back = rotation_to_axis_angle(&r).to_rotation();
            assert!((back - r).abs().max() < 1e-9);
        }
    }

    #[test]
    fn integrate_zero_and_pure_motions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_pose(&mut rng);
        assert!(integrate_twist(&p, &Twist::zero(), 0.1).max_abs_diff(&p) < 1e-12);

        let lin = Twist::new(Vector3::new(0.0, 0.0, -0.1), Vector3::zeros());
        let moved = integrate_twist(&Pose::identity(), &lin, 0.1);
        assert!((moved.translation - Vector3::new(0.0, 0.0, -0.01)).norm() < 1e-15);

        let omega = 0.7;
        let rot = Twist::new(Vector3::zeros(), Vector3::new(0.0, 0.0, omega));
        let start = Pose::from_translation(Vector3::new(0.1, 0.2, 0.3));
        let turned = integrate_twist(&start, &rot, 0.1);
        assert!((turned.rotation - rot_z(omega * 0.1)).abs().max() < 1e-12);
        assert_eq!(turned.translation, start.translation);
    }

    #[test]
    fn substeps_match_single_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let p = random_pose(&mut rng);
            let v = Twist::from_slice(&[0.1, -0.05, 0.12, 0.3, -0.2, 0.9]);
            let single = integrate_twist(&p, &v, 0.1);
            for n in [2, 5, 10, 50] {
                let mut q = p;
                for _ in 0..n {
                    q = integrate_twist(&q, &v, 0.1 / n as f64);
                }
                assert!(q.max_abs_diff(&single) < 1e-9, "n={n}");
            }
        }
    }

    #[test]
    fn decoupled_step_moves_center_along_rotated_velocity() {
        let p = Pose::new(rot_x(PI), Vector3::new(0.0, 0.0, 0.3));
        let v = Twist::new(Vector3::new(0.0, 0.0, 0.1), Vector3::new(0.0, 0.0, 0.5));
        let q = integrate_twist_decoupled(&p, &v, 0.1);
        assert!((q.translation - Vector3::new(0.0, 0.0, 0.29)).norm() < 1e-15);
        assert!((q.rotation - rot_x(PI) * rot_z(0.05)).abs().max() < 1e-12);
    }

    #[test]
    fn pose_json_layout() {
        let p = Pose::new(rot_z(0.3), Vector3::new(1.0, 2.0, 3.0));
        let s = serde_json::to_string(&p).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["r"].as_array().unwrap().len(), 9);
        assert_eq!(v["t"][2].as_f64(), Some(3.0));
        assert_eq!(v["r"][1].as_f64(), Some(-(0.3f64.sin())));
        let back: Pose = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn twist_clamp() {
        let t = Twist::from_slice(&[0.3, -0.2, 0.1, -1.0, 0.0, 0.15]).clamped(0.15);
        assert_eq!(t.to_array(), [0.15, -0.15, 0.1, -0.15, 0.0, 0.15]);
    }
}
