//! Model-based controllers: the PBVS expert and the classical IBVS baseline.

use nalgebra::{DMatrix, DVector, Matrix6, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::camera::{Intrinsics, KeypointSet};
use crate::error::{check_dim, Result, ServoError};
use crate::geometry::{rotation_to_axis_angle, Pose, Twist};

pub const DEFAULT_GAIN: f64 = 0.4;
pub const DEFAULT_DAMPING: f64 = 1e-6;
const MAX_CONDITION: f64 = 1e12;

/// Per-keypoint depths (m) in the current camera frame.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthVector(pub Vec<f64>);

impl DepthVector {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if let Some((index, &depth)) = z.iter().enumerate().find(|(_, d)| !(**d > 0.0)) {
            return Err(ServoError::NonPositiveDepth { index, depth });
        }
        Ok(Self(z))
    }
}

/// Which depths feed the IBVS interaction matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthSource {
    /// True per-point depths at the current pose.
    #[default]
    Current,
    /// Depths measured once at the desired pose.
    Desired,
}

/// `v = -λ [Rᵀt; θu]` with `rel = ^{c*}T_c`. Not clamped.
pub fn pbvs(rel: &Pose, gain: f64) -> Twist {
    let linear = rel.rotation.transpose() * rel.translation * -gain;
    let angular = rotation_to_axis_angle(&rel.rotation).vector() * -gain;
    Twist::new(linear, angular)
}

/// Stacked 2n×6 interaction matrix for normalized points `(x, y)` at depths `z`.
pub fn interaction_matrix(points: &[(f64, f64)], depths: &[f64]) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(2 * points.len(), 6);
    for (i, (&(x, y), &z)) in points.iter().zip(depths).enumerate() {
        let inv_z = 1.0 / z;
        let r = 2 * i;
        let row_u = [-inv_z, 0.0, x * inv_z, x * y, -(1.0 + x * x), y];
        let row_v = [0.0, -inv_z, y * inv_z, 1.0 + y * y, -x * y, -x];
        for c in 0..6 {
            l[(r, c)] = row_u[c];
            l[(r + 1, c)] = row_v[c];
        }
    }
    l
}

/// `(LᵀL + μI)⁻¹ Lᵀ`, failing when the damped normal matrix is ill-conditioned.
pub fn damped_pseudo_inverse(l: &DMatrix<f64>, damping: f64) -> Result<DMatrix<f64>> {
    let mut normal: Matrix6<f64> = Matrix6::zeros();
    normal.copy_from(&(l.transpose() * l));
    normal += Matrix6::identity() * damping;
    let eig = SymmetricEigen::new(normal);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(ServoError::SingularInteraction(condition));
    }
    let inv = normal
        .try_inverse()
        .ok_or(ServoError::SingularInteraction(condition))?;
    let inv = DMatrix::from_column_slice(6, 6, inv.as_slice());
    Ok(inv * l.transpose())
}

/// Classical IBVS on normalized image coordinates: `v = -λ L⁺ (s - s*)`.
pub fn ibvs(
    current: &KeypointSet,
    desired: &KeypointSet,
    depth: &DepthVector,
    k: &Intrinsics,
    gain: f64,
    damping: f64,
) -> Result<Twist> {
    check_dim("ibvs desired keypoints", current.len(), desired.len())?;
    check_dim("ibvs depths", current.len(), depth.0.len())?;
    if current.len() < 3 {
        return Err(ServoError::DimensionMismatch {
            context: "ibvs needs at least 3 keypoints",
            expected: 3,
            actual: current.len(),
        });
    }
    let cur: Vec<(f64, f64)> = current
        .pixels
        .iter()
        .map(|p| {
            let n = k.normalize(p);
            (n.x, n.y)
        })
        .collect();
    let mut err = DVector::zeros(2 * cur.len());
    for (i, (c, d)) in cur.iter().zip(&desired.pixels).enumerate() {
        let dn = k.normalize(d);
        err[2 * i] = c.0 - dn.x;
        err[2 * i + 1] = c.1 - dn.y;
    }
    if err.iter().all(|e| *e == 0.0) {
        return Ok(Twist::zero());
    }
    let l = interaction_matrix(&cur, &depth.0);
    let v = damped_pseudo_inverse(&l, damping)? * err * -gain;
    Ok(Twist::from_slice(v.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{builtin_model, project_with_depth};
    use crate::geometry::{axis_angle_to_rotation, integrate_twist, relative_pose, rot_x};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn down(x: f64, y: f64, z: f64) -> Pose {
        Pose::new(rot_x(PI), Vector3::new(x, y, z))
    }

    #[test]
    fn pbvs_cases() {
        assert_eq!(pbvs(&Pose::identity(), 0.4), Twist::zero());
        let rel = Pose::from_translation(Vector3::new(0.0, 0.0, 0.10));
        let v = pbvs(&rel, 0.4);
        assert!((v.linear - Vector3::new(0.0, 0.0, -0.04)).norm() < 1e-15);
        assert_eq!(v.angular, Vector3::zeros());

        let rel = Pose::new(
            axis_angle_to_rotation(&Vector3::new(0.2, -0.1, 0.7)),
            Vector3::new(0.03, -0.02, 0.1),
        );
        let a = pbvs(&rel, 0.4).to_array();
        let b = pbvs(&rel, 0.8).to_array();
        for i in 0..6 {
            assert!((b[i] - 2.0 * a[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn ibvs_is_zero_at_goal() {
        let k = Intrinsics::default();
        let model = builtin_model("apriltag").unwrap();
        let (kp, z) = project_with_depth(&model, &down(0.01, 0.02, 0.2), &k).unwrap();
        let v = ibvs(&kp, &kp, &DepthVector::new(z).unwrap(), &k, 0.4, DEFAULT_DAMPING).unwrap();
        assert_eq!(v, Twist::zero());
    }

    #[test]
    fn ibvs_rejects_mismatched_lengths() {
        let k = Intrinsics::default();
        let model = builtin_model("apriltag").unwrap();
        let (kp, z) = project_with_depth(&model, &down(0.0, 0.0, 0.2), &k).unwrap();
        let mut short = kp.clone();
        short.pixels.pop();
        let depth = DepthVector::new(z).unwrap();
        assert!(matches!(
            ibvs(&short, &kp, &depth, &k, 0.4, DEFAULT_DAMPING),
            Err(ServoError::DimensionMismatch { .. })
        ));
        assert!(DepthVector::new(vec![0.1, 0.0, 0.2]).is_err());
    }

    #[test]
    fn degenerate_configuration_is_singular() {
        // four coincident points only constrain two directions
        let l = interaction_matrix(&[(0.1, -0.2); 4], &[0.3; 4]);
        assert!(matches!(
            damped_pseudo_inverse(&l, 1e-14),
            Err(ServoError::SingularInteraction(_))
        ));
    }

    // Central differences of the projection under a body-frame twist.
    #[test]
    fn interaction_matrix_matches_projection_differences() {
        let k = Intrinsics::default();
        let model = builtin_model("toy_horse").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..50 {
            let tilt = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-PI..PI));
            let pose = Pose::new(
                rot_x(PI) * axis_angle_to_rotation(&tilt),
                Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(0.2..0.4)),
            );
            let (kp, z) = project_with_depth(&model, &pose, &k).unwrap();
            let pts: Vec<(f64, f64)> = kp.pixels.iter().map(|p| { let n = k.normalize(p); (n.x, n.y) }).collect();
            let l = interaction_matrix(&pts, &z);
            let mut tw = [0.0; 6];
            for t in tw.iter_mut() {
                *t = rng.random_range(-1.0..1.0);
            }
            let twist = Twist::from_slice(&tw);
            let plus = project_with_depth(&model, &integrate_twist(&pose, &twist, h), &k).unwrap().0;
            let minus = project_with_depth(&model, &integrate_twist(&pose, &twist, -h), &k).unwrap().0;
            let predicted = &l * DVector::from_row_slice(&tw);
            for i in 0..kp.len() {
                let dp = k.normalize(&plus.pixels[i]);
                let dm = k.normalize(&minus.pixels[i]);
                let fd = (dp - dm) / (2.0 * h);
                assert!((fd.x - predicted[2 * i]).abs() < 1e-4);
                assert!((fd.y - predicted[2 * i + 1]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn ibvs_step_reduces_image_error_for_small_translation() {
        let k = Intrinsics::default();
        let model = builtin_model("apriltag").unwrap();
        let desired = down(0.0, 0.0, 0.2);
        let (s_star, _) = project_with_depth(&model, &desired, &k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let offset = Vector3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02));
            let start = Pose::new(desired.rotation, desired.translation + offset);
            let (s, z) = project_with_depth(&model, &start, &k).unwrap();
            let v = ibvs(&s, &s_star, &DepthVector::new(z).unwrap(), &k, 0.4, DEFAULT_DAMPING)
                .unwrap()
                .clamped(0.15);
            let next = integrate_twist(&start, &v, 0.1);
            let (s_next, _) = project_with_depth(&model, &next, &k).unwrap();
            assert!(s_next.l1_error(&s_star) < s.l1_error(&s_star));
            // and PBVS agrees on the overall direction of travel
            let p = pbvs(&relative_pose(&desired, &start), 0.4);
            assert!(p.linear.dot(&v.linear) > 0.0);
        }
    }
}
