//! The hypernetwork writes the last layer of the servo trunk from the desired
//! keypoints; a materialized copy is an ordinary dense controller.

use hpn_servo::camera::{builtin_model, project, Intrinsics};
use hpn_servo::controllers::{HpnNc, NetworkWidths};
use hpn_servo::geometry::{rot_x, Pose};
use hpn_servo::nn::AdamConfig;
use hpn_servo::sim::episode_rng;
use nalgebra::Vector3;

fn main() -> hpn_servo::Result<()> {
    let mut rng = episode_rng(5, 0);
    let k = Intrinsics::default();
    let model = builtin_model("apriltag")?;
    let hpn = HpnNc::new(model.len(), &NetworkWidths::default(), 0.15, AdamConfig::default(), &mut rng)?;
    println!("trunk params {}, with hypernetwork {}", hpn.servo_param_count(), hpn.total_param_count());

    let desired = project(&model, &Pose::new(rot_x(std::f64::consts::PI), Vector3::new(0.0, 0.0, 0.15)), &k)?;
    let current = project(&model, &Pose::new(rot_x(3.0), Vector3::new(0.01, 0.0, 0.17)), &k)?;
    let generated = hpn.generate(&desired, &k)?;
    let fcn = hpn.materialize(&generated)?;
    let error: Vec<f64> = desired.to_network_input(&k).iter().zip(current.to_network_input(&k)).map(|(a, b)| a - b).collect();
    println!("overlay      {:?}", hpn.forward_generated(&generated, &error)?.to_array());
    println!("materialized {:?}", fcn.forward(&error)?.to_array());
    Ok(())
}
