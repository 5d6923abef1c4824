//! Paired comparison of the two classical laws on identical episodes.

use hpn_servo::controllers::{Controller, IbvsController, PbvsController};
use hpn_servo::eval::{compare, format_table, EvalOptions};
use hpn_servo::sim::EpisodeConfig;

fn main() -> hpn_servo::Result<()> {
    let config = EpisodeConfig::default();
    let pbvs = PbvsController::default();
    let ibvs = IbvsController::default();
    let controllers: [&dyn Controller; 2] = [&pbvs, &ibvs];
    let reports = compare(&controllers, &config, &EvalOptions::new(100, 3))?;
    print!("{}", format_table(&reports));
    Ok(())
}
