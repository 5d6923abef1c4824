use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hpn-servo"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

const TINY: &str = r#"{
  "controller": { "widths": { "trunk_hidden": 16, "hyper_hidden": [12, 10], "ae_hidden": 8 } },
  "training": {
    "schedule": { "epochs": 1, "collect_steps_per_epoch": 200, "batches_per_epoch": 5, "batch_size": 32, "probe_episodes": 0 },
    "finetune": { "epochs": 1, "collect_steps_per_epoch": 100, "batches_per_epoch": 3, "batch_size": 16, "probe_episodes": 0 },
    "finetune_eval_episodes": 3
  }
}"#;

#[test]
fn help_lists_every_subcommand() {
    let out = Command::new(env!("CARGO_BIN_EXE_hpn-servo")).arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["train", "finetune", "eval", "compare", "trajectory", "gradcheck"] {
        assert!(text.contains(sub), "{sub} missing from:\n{text}");
    }
}

#[test]
fn missing_checkpoint_exits_2_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("nope.json");
    let out = bin(&["eval", "--controller", "hpn-nc", "--checkpoint", ck.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

#[test]
fn invalid_config_is_a_diagnostic_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"episode":{"dt":-1}}"#).unwrap();
    let out = bin(&["eval", "--config", cfg.to_str().unwrap(), "--episodes", "1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dt"));
}

#[test]
fn eval_writes_outputs_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = bin(&["eval", "--controller", "ibvs", "--episodes", "6", "--seed", "4", "--trajectories"], d);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["report.json", "episodes.csv", "config.json", "timing.json", "trajectories/episode_0005.csv"] {
        assert!(a.join(f).is_file(), "{f}");
    }
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "report.json"), read(&b, "report.json"));
    assert_eq!(read(&a, "episodes.csv"), read(&b, "episodes.csv"));
    let report: serde_json::Value = serde_json::from_slice(&read(&a, "report.json")).unwrap();
    assert_eq!(report["episodes"], 6);
    let cfg: serde_json::Value = serde_json::from_slice(&read(&a, "config.json")).unwrap();
    assert_eq!(cfg["seed"], 4);
}

#[test]
fn compare_and_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["compare", "--controller", "pbvs", "--controller", "ibvs", "--episodes", "4"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("table.txt")).unwrap();
    assert!(table.contains("pbvs") && table.contains("ibvs"));

    let out = bin(&["trajectory", "--episode", "2"], dir.path());
    assert!(out.status.success());
    assert!(dir.path().join("trajectory.csv").is_file());
}

#[test]
fn train_then_eval_and_finetune_learned_controller() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();
    let cfg = cfg.to_str().unwrap();
    let train = dir.path().join("train");
    let out = bin(&["train", "--config", cfg, "--controller", "hpn-nc", "--seed", "3"], &train);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ck = train.join("checkpoint.json");
    assert!(ck.is_file() && train.join("training_log.jsonl").is_file());
    let hash = String::from_utf8_lossy(&out.stdout).trim().to_string();
    assert_eq!(hash.len(), 64);

    let out = bin(&["eval", "--config", cfg, "--controller", "hpn-nc", "--checkpoint", ck.to_str().unwrap(), "--episodes", "2"], &dir.path().join("eval"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = bin(&["eval", "--config", cfg, "--controller", "fcn-nc", "--checkpoint", ck.to_str().unwrap(), "--episodes", "2"], &dir.path().join("wrong"));
    assert_eq!(out.status.code(), Some(1));

    let ft = dir.path().join("ft");
    let out = bin(&["finetune", "--config", cfg, "--checkpoint", ck.to_str().unwrap(), "--desired-index", "1"], &ft);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ft: serde_json::Value = serde_json::from_slice(&std::fs::read(ft.join("finetune.json")).unwrap()).unwrap();
    assert_eq!(ft["rounds"].as_array().unwrap().len(), 2);
}
