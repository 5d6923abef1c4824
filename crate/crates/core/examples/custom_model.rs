//! Servo on a user-supplied keypoint model loaded from a config document.

use hpn_servo::config::Config;
use hpn_servo::controllers::PbvsController;
use hpn_servo::eval::{evaluate, EvalOptions};

const CONFIG: &str = r#"{
  "episode": {
    "model": { "name": "pentagon", "points": [
      [0.0, 0.02, 0.0], [0.019, 0.006, 0.0], [0.012, -0.016, 0.0],
      [-0.012, -0.016, 0.0], [-0.019, 0.006, 0.0]
    ]},
    "observer_noise_sigma": 1.0
  }
}"#;

fn main() -> hpn_servo::Result<()> {
    let cfg = Config::from_json_str(CONFIG)?;
    let episode = cfg.episode_config(4)?;
    println!("model {} with {} points", episode.model.name, episode.model.len());
    let (report, _) = evaluate(&PbvsController::default(), &episode, &EvalOptions::new(50, 4))?;
    println!("pbvs sr {:.1}%  mean ts {:?}", report.sr, report.ts);
    Ok(())
}
