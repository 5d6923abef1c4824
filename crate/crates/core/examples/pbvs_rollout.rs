//! One PBVS episode, written out as a trajectory CSV.

use hpn_servo::controllers::PbvsController;
use hpn_servo::sim::{episode_rng, run_episode, write_trajectory_csv, EpisodeConfig};

fn main() -> hpn_servo::Result<()> {
    let config = EpisodeConfig::default();
    let mut rng = episode_rng(11, 0);
    let result = run_episode(&PbvsController::default(), &config, &mut rng)?;
    println!("{:?} after {} steps", result.outcome, result.steps);
    for rec in result.trajectory.iter().step_by(20) {
        println!("step {:>3}  kp err {:>8.2} px", rec.step, rec.kp_err_sum);
    }
    let path = std::env::temp_dir().join("pbvs_rollout.csv");
    write_trajectory_csv(&path, &result)?;
    println!("wrote {}", path.display());
    Ok(())
}
