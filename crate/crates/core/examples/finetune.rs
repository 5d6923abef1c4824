//! Fine-tune a briefly trained HPN-NC on one desired pose it handles badly.

use hpn_servo::controllers::{NetworkWidths, NeuralController, NeuralKind};
use hpn_servo::eval::{episode_poses, evaluate, EvalOptions};
use hpn_servo::nn::AdamConfig;
use hpn_servo::sim::{episode_rng, EpisodeConfig};
use hpn_servo::training::{finetune, train, TrainSchedule};

fn main() -> hpn_servo::Result<()> {
    let config = EpisodeConfig { seed: 2, ..Default::default() };
    let mut rng = episode_rng(2, 1000);
    let mut net = NeuralController::new(NeuralKind::Hpn, 4, &NetworkWidths::default(), config.v_max, AdamConfig::default(), &mut rng)?;
    let short = TrainSchedule { epochs: 5, probe_episodes: 0, ..TrainSchedule::desk() };
    train(&mut net, &short, &config, &mut rng, |_| {})?;

    let (_, results) = evaluate(&net, &config, &EvalOptions::new(50, 9))?;
    let Some(index) = results.iter().position(|r| !r.success) else {
        println!("no failing episode among 50");
        return Ok(());
    };
    let (desired, _, _) = episode_poses(&config, 9, index as u64, None)?;
    let round = TrainSchedule { epochs: 1, ..TrainSchedule::desk() };
    for r in finetune(&mut net, &desired, 1, &round, 100, 21, &config, &mut rng)? {
        println!("round {}  sr {:.1}%  dataset {}", r.round, r.sr, r.dataset_size);
    }
    Ok(())
}
