use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use hpn_servo::config::Config;
use hpn_servo::controllers::{Controller, IbvsController, NeuralController, NeuralKind, PbvsController, ZeroController};
use hpn_servo::error::ServoError;
use hpn_servo::eval::{compare, episode_poses, episode_rows, evaluate, format_table, measure_inference_ms, write_episode_rows, EvalOptions};
use hpn_servo::sim::{run_episode_from, write_trajectory_csv, EpisodeConfig};
use hpn_servo::training::{finetune, train};

#[derive(Parser)]
#[command(name = "hpn-servo", version, about = "Visual-servoing controller benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config; defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory (default: $SERVO_BENCH_OUT/<command>, else runs/<command>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a learned controller against the PBVS expert.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "hpn-nc")]
        controller: String,
        /// Plain imitation: collect under the expert every epoch.
        #[arg(long)]
        no_dagger: bool,
    },
    /// Fine-tune a checkpoint on one desired pose.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Take the desired pose of this evaluation episode.
        #[arg(long, default_value_t = 0)]
        desired_index: u64,
        /// Seed of the episode stream `desired_index` refers to (default: --seed).
        #[arg(long)]
        desired_seed: Option<u64>,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Evaluate one controller.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "pbvs")]
        controller: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        episodes: usize,
        /// Also write one trajectory CSV per episode.
        #[arg(long)]
        trajectories: bool,
    },
    /// Paired evaluation of several controllers.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Repeatable; learned controllers take checkpoints in order.
        #[arg(long, num_args = 1.., default_values_t = ["pbvs".to_string(), "ibvs".to_string()])]
        controller: Vec<String>,
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, default_value_t = 500)]
        episodes: usize,
    },
    /// Export one episode's trajectory.
    Trajectory {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "pbvs")]
        controller: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        episode: u64,
    },
    /// Finite-difference check of every hand-written gradient.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

fn output_dir(common: &Common, name: &str) -> anyhow::Result<PathBuf> {
    let dir = match &common.out {
        Some(p) => p.clone(),
        None => std::env::var_os("SERVO_BENCH_OUT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(name),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_pretty(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Loads the config, records it with the seed next to the outputs.
fn setup(common: &Common, name: &str) -> anyhow::Result<(Config, EpisodeConfig, PathBuf)> {
    let config = match &common.config {
        Some(p) => Config::from_file(p)?,
        None => Config::default(),
    };
    let episode = config.episode_config(common.seed)?;
    let dir = output_dir(common, name)?;
    write_pretty(&dir.join("config.json"), &json!({ "seed": common.seed, "config": config.resolved()? }))?;
    eprintln!("seed {} -> {}", common.seed, dir.display());
    Ok((config, episode, dir))
}

fn parse_kind(tag: &str) -> Option<NeuralKind> {
    [NeuralKind::Fcn, NeuralKind::Ae, NeuralKind::Hpn].into_iter().find(|k| k.tag() == tag)
}

fn build_controller(tag: &str, checkpoint: Option<&Path>, config: &Config) -> anyhow::Result<Box<dyn Controller>> {
    let c = &config.controller;
    Ok(match tag {
        "pbvs" => Box::new(PbvsController::new(config.episode.lambda, Some(config.episode.v_max))),
        "ibvs" => Box::new(IbvsController {
            gain: c.gain,
            damping: c.ibvs_damping,
            depth: c.ibvs_depth,
        }),
        "zero" => Box::new(ZeroController),
        _ => {
            let kind = parse_kind(tag).ok_or_else(|| anyhow::anyhow!("unknown controller `{tag}`"))?;
            let path = checkpoint.ok_or_else(|| anyhow::anyhow!("controller `{tag}` needs --checkpoint"))?;
            let net = NeuralController::load(path, c.adam)?;
            if net.kind() != kind {
                bail!("{} holds a {} controller, not {tag}", path.display(), net.kind().tag());
            }
            Box::new(net)
        }
    })
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Train { common, controller, no_dagger } => {
            let (config, episode, dir) = setup(&common, "train")?;
            let kind = parse_kind(&controller).ok_or_else(|| anyhow::anyhow!("`{controller}` is not a learned controller"))?;
            let mut schedule = config.training.schedule;
            schedule.dagger &= !no_dagger;
            let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
            let n = episode.model.points.len();
            let mut net = NeuralController::new(kind, n, &config.controller.widths, episode.v_max, config.controller.adam, &mut rng)?;
            let log_path = dir.join("training_log.jsonl");
            let log = train(&mut net, &schedule, &episode, &mut rng, |r| {
                eprintln!("epoch {:>3}  samples {:>7}  loss {:.3e}  probe sr {:?}", r.epoch, r.dataset_size, r.mean_loss, r.probe_sr);
            })?;
            log.write_jsonl(fs::File::create(&log_path)?)?;
            let hash = net.save(&dir.join("checkpoint.json"), common.seed)?;
            write_pretty(&dir.join("summary.json"), &json!({
                "controller": kind.tag(),
                "seed": common.seed,
                "checkpoint_sha256": hash,
                "param_count": net.param_count(),
                "total_param_count": net.total_param_count(),
                "final_probe_sr": log.epochs.last().and_then(|e| e.probe_sr),
            }))?;
            println!("{hash}");
        }
        Command::Finetune { common, checkpoint, desired_index, desired_seed, rounds } => {
            let (config, episode, dir) = setup(&common, "finetune")?;
            let mut net = NeuralController::load(&checkpoint, config.controller.adam)?;
            if let NeuralController::Hpn(h) = &mut net {
                h.freeze_hyper = config.controller.freeze_hyper;
            }
            let (desired, _, _) = episode_poses(&episode, desired_seed.unwrap_or(common.seed), desired_index, None)?;
            let t = &config.training;
            let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
            let curve = finetune(
                &mut net,
                &desired,
                rounds.unwrap_or(t.finetune_rounds),
                &t.finetune,
                t.finetune_eval_episodes,
                common.seed,
                &episode,
                &mut rng,
            )?;
            let hash = net.save(&dir.join("checkpoint.json"), common.seed)?;
            write_pretty(&dir.join("finetune.json"), &json!({
                "desired": desired,
                "rounds": curve,
                "checkpoint_sha256": hash,
            }))?;
            for r in &curve {
                println!("round {}  sr {:.1}  ts {:?}", r.round, r.sr, r.mean_ts);
            }
        }
        Command::Eval { common, controller, checkpoint, episodes, trajectories } => {
            let (config, episode, dir) = setup(&common, "eval")?;
            let ctrl = build_controller(&controller, checkpoint.as_deref(), &config)?;
            let mut opts = EvalOptions::new(episodes, common.seed);
            opts.jobs = common.jobs;
            let (report, results) = evaluate(ctrl.as_ref(), &episode, &opts)?;
            write_pretty(&dir.join("report.json"), &report)?;
            write_episode_rows(&dir.join("episodes.csv"), &episode_rows(&results))?;
            if trajectories {
                let tdir = dir.join("trajectories");
                fs::create_dir_all(&tdir)?;
                for (i, r) in results.iter().enumerate() {
                    write_trajectory_csv(&tdir.join(format!("episode_{i:04}.csv")), r)?;
                }
            }
            let ms = measure_inference_ms(ctrl.as_ref(), &episode, common.seed, 1000)?;
            write_pretty(&dir.join("timing.json"), &json!({ "controller": report.controller, "median_inference_ms": ms }))?;
            print!("{}", format_table(std::slice::from_ref(&report)));
        }
        Command::Compare { common, controller, checkpoint, episodes } => {
            let (config, episode, dir) = setup(&common, "compare")?;
            let mut ckpts = checkpoint.iter();
            let mut ctrls = Vec::new();
            for tag in &controller {
                let ck = if parse_kind(tag).is_some() { ckpts.next().map(PathBuf::as_path) } else { None };
                ctrls.push(build_controller(tag, ck, &config)?);
            }
            let refs: Vec<&dyn Controller> = ctrls.iter().map(|c| c.as_ref()).collect();
            let mut opts = EvalOptions::new(episodes, common.seed);
            opts.jobs = common.jobs;
            let reports = compare(&refs, &episode, &opts)?;
            write_pretty(&dir.join("report.json"), &reports)?;
            let table = format_table(&reports);
            fs::write(dir.join("table.txt"), &table)?;
            print!("{table}");
        }
        Command::Trajectory { common, controller, checkpoint, episode: index } => {
            let (config, episode, dir) = setup(&common, "trajectory")?;
            let ctrl = build_controller(&controller, checkpoint.as_deref(), &config)?;
            let (desired, initial, mut rng) = episode_poses(&episode, common.seed, index, None)?;
            let result = run_episode_from(ctrl.as_ref(), &episode, &desired, &initial, &mut rng)?;
            write_trajectory_csv(&dir.join("trajectory.csv"), &result)?;
            write_pretty(&dir.join("result.json"), &result)?;
            println!("{:?} after {} steps", result.outcome, result.steps);
        }
        Command::Gradcheck { common } => {
            let dir = output_dir(&common, "gradcheck")?;
            let report = hpn_servo::gradcheck::run(common.seed)?;
            write_pretty(&dir.join("gradcheck.json"), &report)?;
            for c in &report.checks {
                println!("{:<28} {:>7} entries  max rel err {:.3e}", c.label, c.entries, c.max_rel_error);
            }
            println!("max relative gradient error {:.3e}", report.max_rel_error);
            if !report.passed() {
                eprintln!("gradient check failed: tolerance {:e}", hpn_servo::gradcheck::TOLERANCE);
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<ServoError>() {
                Some(ServoError::MissingCheckpoint(_)) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
