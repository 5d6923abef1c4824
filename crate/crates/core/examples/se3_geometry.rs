//! Axis-angle round trips, relative poses and one integration step.

use hpn_servo::geometry::{
    axis_angle_to_rotation, integrate_twist, integrate_twist_decoupled, pose_errors, relative_pose, rot_x, rotation_to_axis_angle, Pose, Twist,
};
use nalgebra::Vector3;

fn main() {
    let theta_u = Vector3::new(0.3, -0.2, 0.9);
    let r = axis_angle_to_rotation(&theta_u);
    let back = rotation_to_axis_angle(&r);
    println!("theta_u {:?} -> {:?} (angle {:.4} rad)", theta_u.as_slice(), back.vector().as_slice(), back.angle());

    let desired = Pose::new(rot_x(std::f64::consts::PI), Vector3::new(0.0, 0.0, 0.15));
    let current = Pose::new(rot_x(std::f64::consts::PI - 0.1), Vector3::new(0.02, -0.01, 0.18));
    let rel = relative_pose(&desired, &current);
    let (re, te) = pose_errors(&rel);
    println!("rotation error {re:.4} rad, translation error {:.2} cm", te * 100.0);

    let v = Twist::new(Vector3::new(0.05, 0.0, -0.02), Vector3::new(0.0, 0.3, 0.0));
    let exact = integrate_twist(&current, &v, 0.05);
    let decoupled = integrate_twist_decoupled(&current, &v, 0.05);
    println!("exponential vs decoupled step differ by {:.2e}", exact.max_abs_diff(&decoupled));
}
