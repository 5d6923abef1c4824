//! Batch evaluation and paired controller comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::project_with_depth;
use crate::controllers::{Controller, Observation};
use crate::error::{Result, ServoError};
use crate::geometry::{relative_pose, Pose};
use crate::sim::{episode_rng, run_episode_from, sample_desired_pose, sample_initial_pose, EpisodeConfig, EpisodeResult, Outcome};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population statistics; `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

/// Aggregate over one evaluation run. TS/RE/TE only count successful episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub controller: String,
    pub episodes: usize,
    pub successes: usize,
    /// Success rate in percent.
    pub sr: f64,
    /// Steps (0.1 s each).
    pub ts: Option<MeanStd>,
    /// Radians.
    pub re: Option<MeanStd>,
    /// Centimeters.
    pub te_cm: Option<MeanStd>,
    pub param_count: Option<usize>,
    pub outcomes: BTreeMap<String, usize>,
    /// SHA-256 over every episode's desired and initial pose.
    pub pose_hash: String,
}

fn outcome_name(o: Outcome) -> String {
    serde_json::to_value(o)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

pub fn pose_hash(results: &[EpisodeResult]) -> String {
    let mut h = Sha256::new();
    for r in results {
        for p in [&r.desired, &r.initial] {
            for v in p.to_array() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

/// One line of the per-episode summary CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub outcome: Outcome,
    pub steps: usize,
    pub final_re: f64,
    pub final_te: f64,
    pub final_kp_err: f64,
    pub converged_kp: bool,
    pub converged_pose: bool,
    pub success: bool,
}

impl EpisodeRow {
    pub fn from_result(episode: usize, r: &EpisodeResult) -> Self {
        Self {
            episode,
            outcome: r.outcome,
            steps: r.steps,
            final_re: r.final_re,
            final_te: r.final_te,
            final_kp_err: r.final_kp_err,
            converged_kp: r.converged_kp,
            converged_pose: r.converged_pose,
            success: r.success,
        }
    }
}

pub fn write_episode_rows(path: &Path, rows: &[EpisodeRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_episode_rows(path: &Path) -> Result<Vec<EpisodeRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(ServoError::from)).collect()
}

/// Report statistics from summary rows (in episode order).
pub fn aggregate_rows(controller: &str, param_count: Option<usize>, rows: &[EpisodeRow], pose_hash: String) -> EvalReport {
    let ok: Vec<&EpisodeRow> = rows.iter().filter(|r| r.success).collect();
    let mut outcomes = BTreeMap::new();
    for r in rows {
        *outcomes.entry(outcome_name(r.outcome)).or_insert(0) += 1;
    }
    let steps: Vec<f64> = ok.iter().map(|r| r.steps as f64).collect();
    let re: Vec<f64> = ok.iter().map(|r| r.final_re).collect();
    let te: Vec<f64> = ok.iter().map(|r| r.final_te * 100.0).collect();
    EvalReport {
        controller: controller.to_string(),
        episodes: rows.len(),
        successes: ok.len(),
        sr: if rows.is_empty() { 0.0 } else { 100.0 * ok.len() as f64 / rows.len() as f64 },
        ts: MeanStd::of(&steps),
        re: MeanStd::of(&re),
        te_cm: MeanStd::of(&te),
        param_count,
        outcomes,
        pose_hash,
    }
}

pub fn episode_rows(results: &[EpisodeResult]) -> Vec<EpisodeRow> {
    results.iter().enumerate().map(|(i, r)| EpisodeRow::from_result(i, r)).collect()
}

/// Builds a report from per-episode results (in episode order).
pub fn aggregate(controller: &str, param_count: Option<usize>, results: &[EpisodeResult]) -> EvalReport {
    aggregate_rows(controller, param_count, &episode_rows(results), pose_hash(results))
}

/// Desired/initial pose pair of episode `index`; identical for every controller.
pub fn episode_poses(config: &EpisodeConfig, seed: u64, index: u64, fixed_desired: Option<&Pose>) -> Result<(Pose, Pose, rand_chacha::ChaCha8Rng)> {
    let mut rng = episode_rng(seed, index);
    let desired = match fixed_desired {
        Some(p) => *p,
        None => sample_desired_pose(&mut rng, config)?,
    };
    let initial = sample_initial_pose(&mut rng, config, &desired)?;
    Ok((desired, initial, rng))
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions<'a> {
    pub episodes: usize,
    pub seed: u64,
    /// Worker threads; results never depend on it.
    pub jobs: usize,
    /// Evaluate against one desired pose instead of sampling per episode.
    pub fixed_desired: Option<&'a Pose>,
}

impl EvalOptions<'_> {
    pub fn new(episodes: usize, seed: u64) -> Self {
        Self {
            episodes,
            seed,
            jobs: 1,
            fixed_desired: None,
        }
    }
}

pub fn run_episodes(controller: &dyn Controller, config: &EpisodeConfig, opts: &EvalOptions<'_>) -> Result<Vec<EpisodeResult>> {
    if opts.episodes == 0 {
        return Err(ServoError::InvalidConfig("at least one episode is required".into()));
    }
    let one = |i: usize| -> Result<EpisodeResult> {
        let (desired, initial, mut rng) = episode_poses(config, opts.seed, i as u64, opts.fixed_desired)?;
        run_episode_from(controller, config, &desired, &initial, &mut rng)
    };
    if opts.jobs <= 1 {
        (0..opts.episodes).map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| ServoError::InvalidConfig(e.to_string()))?;
        pool.install(|| (0..opts.episodes).into_par_iter().map(one).collect())
    }
}

pub fn evaluate(controller: &dyn Controller, config: &EpisodeConfig, opts: &EvalOptions<'_>) -> Result<(EvalReport, Vec<EpisodeResult>)> {
    let results = run_episodes(controller, config, opts)?;
    Ok((aggregate(&controller.label(), controller.param_count(), &results), results))
}

/// Median wall time (ms) of `queries` warm control queries on a sampled episode.
pub fn measure_inference_ms(controller: &dyn Controller, config: &EpisodeConfig, seed: u64, queries: usize) -> Result<f64> {
    let (desired, initial, _) = episode_poses(config, seed, 0, None)?;
    let k = &config.intrinsics;
    let (s_star, dd) = project_with_depth(&config.model, &desired, k)?;
    let (s, d) = project_with_depth(&config.model, &initial, k)?;
    let rel = relative_pose(&desired, &initial);
    let obs = Observation {
        desired: &s_star,
        current: &s,
        depths: &d,
        desired_depths: &dd,
        relative: &rel,
        intrinsics: k,
    };
    let mut session = controller.session(&s_star, k)?;
    for _ in 0..50 {
        session.command(&obs)?;
    }
    let mut times = Vec::with_capacity(queries.max(1));
    for _ in 0..queries.max(1) {
        let t = Instant::now();
        std::hint::black_box(session.command(std::hint::black_box(&obs))?);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

/// Paired comparison: every controller sees the same pose sequence.
pub fn compare(controllers: &[&dyn Controller], config: &EpisodeConfig, opts: &EvalOptions<'_>) -> Result<Vec<EvalReport>> {
    if controllers.len() < 2 {
        return Err(ServoError::InvalidConfig("compare needs at least two controllers".into()));
    }
    let mut reports = Vec::with_capacity(controllers.len());
    for c in controllers {
        reports.push(evaluate(*c, config, opts)?.0);
    }
    debug_assert!(reports.windows(2).all(|w| w[0].pose_hash == w[1].pose_hash));
    Ok(reports)
}

fn fmt_stat(s: &Option<MeanStd>, prec: usize) -> String {
    match s {
        Some(s) => format!("{:.p$}±{:.p$}", s.mean, s.std, p = prec),
        None => "-".into(),
    }
}

/// Plain-text table in the layout of a controller comparison.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>7} {:>18} {:>15} {:>15} {:>12}",
        "controller", "SR(%)", "TS(0.1s)", "RE(rad)", "TE(cm)", "#params"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<10} {:>7.1} {:>18} {:>15} {:>15} {:>12}",
            r.controller,
            r.sr,
            fmt_stat(&r.ts, 2),
            fmt_stat(&r.re, 3),
            fmt_stat(&r.te_cm, 3),
            r.param_count.map(|p| p.to_string()).unwrap_or_else(|| "-".into()),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::{PbvsController, ZeroController};

    #[test]
    fn mean_std() {
        let s = MeanStd::of(&[1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert!(MeanStd::of(&[]).is_none());
    }

    #[test]
    fn zero_controller_report_has_no_stats() {
        let config = EpisodeConfig::default();
        let (r, _) = evaluate(&ZeroController, &config, &EvalOptions::new(3, 1)).unwrap();
        assert_eq!(r.sr, 0.0);
        assert!(r.ts.is_none() && r.re.is_none() && r.te_cm.is_none());
        assert_eq!(r.outcomes.get("max_steps"), Some(&3));
    }

    #[test]
    fn jobs_do_not_change_results() {
        let config = EpisodeConfig::default();
        let mut opts = EvalOptions::new(6, 5);
        let (a, _) = evaluate(&PbvsController::default(), &config, &opts).unwrap();
        opts.jobs = 3;
        let (b, _) = evaluate(&PbvsController::default(), &config, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn summary_csv_reproduces_report() {
        let config = EpisodeConfig::default();
        let (r, results) = evaluate(&PbvsController::default(), &config, &EvalOptions::new(8, 3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episodes.csv");
        write_episode_rows(&path, &episode_rows(&results)).unwrap();
        let rows = read_episode_rows(&path).unwrap();
        assert_eq!(aggregate_rows("pbvs", None, &rows, r.pose_hash.clone()), r);
    }

    #[test]
    fn compare_needs_two() {
        let config = EpisodeConfig::default();
        assert!(compare(&[&ZeroController], &config, &EvalOptions::new(1, 0)).is_err());
        let reports = compare(&[&PbvsController::default(), &ZeroController], &config, &EvalOptions::new(4, 2)).unwrap();
        assert!(reports[0].sr > reports[1].sr);
        assert_eq!(reports[0].pose_hash, reports[1].pose_hash);
        assert!(format_table(&reports).contains("pbvs"));
    }
}
