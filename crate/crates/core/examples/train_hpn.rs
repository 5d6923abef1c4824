//! Desk-scale DAgger training of HPN-NC, then a 200-episode probe.
//!
//! `cargo run --release --example train_hpn -- [hpn|fcn|ae]`

use hpn_servo::controllers::{NetworkWidths, NeuralController, NeuralKind};
use hpn_servo::eval::{evaluate, EvalOptions};
use hpn_servo::nn::AdamConfig;
use hpn_servo::sim::{episode_rng, EpisodeConfig};
use hpn_servo::training::{train, TrainSchedule};

fn main() -> hpn_servo::Result<()> {
    let kind = match std::env::args().nth(1).as_deref() {
        Some("fcn") => NeuralKind::Fcn,
        Some("ae") => NeuralKind::Ae,
        _ => NeuralKind::Hpn,
    };
    let config = EpisodeConfig { seed: 1, ..Default::default() };
    let mut rng = episode_rng(1, 1000);
    let mut net = NeuralController::new(kind, 4, &NetworkWidths::default(), config.v_max, AdamConfig::default(), &mut rng)?;
    let log = train(&mut net, &TrainSchedule::desk(), &config, &mut rng, |r| {
        println!("epoch {:>2}  samples {:>6}  loss {:.2e}  probe sr {:?}", r.epoch, r.dataset_size, r.mean_loss, r.probe_sr);
    })?;
    let (report, _) = evaluate(&net, &config, &EvalOptions::new(200, 777))?;
    println!("{}: probe sr {:.1}%  outcomes {:?}", kind.tag(), report.sr, report.outcomes);
    println!("curve {:?}", log.probe_curve());
    Ok(())
}
