//! Experiment orchestration: seeded multi-run execution of the two-phase
//! protocol (learn, test, environment change, learn, test), probe scheduling,
//! failure tracking, classification, and result serialization.
//!
//! Every number a run produces is determined by `(config, master seed, run
//! index)`; runs execute in parallel on independent random streams, so worker
//! count and scheduling never change the results.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{eval_step, Agent};
use crate::config::{ExperimentConfig, Task};
use crate::env::crank::{self, CrankConfig, CrankEnv};
use crate::env::nav::{self, NavConfig, NavEnv};
use crate::env::Environment;
use crate::learning::{LearningCondition, SensitivityTracker};
use crate::metrics::{
    classify_crank_run, classify_navigation_run, exploration_exponent_mean, learning_curve,
    Classification, CurvePoint, NavFailureRules, ProbeSettings, RunVerdict,
};
use crate::rnn::{Network, NetworkState};
use crate::seed::{stream_rng, STREAM_NOISE, STREAM_PROBE, STREAM_STARTS};
use crate::td::CriticRaiser;
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// 1-based episode number.
    pub episode: u32,
    /// Acting steps taken (timeouts record the full episode length).
    pub steps: u32,
    /// Per-episode performance scalar: steps to goal (navigation) or signed
    /// revolutions (crank).
    pub performance: f64,
    pub reward_sum: f64,
    pub reward_events: u32,
    pub penalty_events: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub episode: u32,
    pub lambda_env1: Option<f64>,
    pub lambda_env2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub after_episode: u32,
    /// Average of `per_start` (steps or revolutions).
    pub average: f64,
    pub per_start: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub end_episode: u32,
    pub average: f64,
}

/// Complete, replayable log of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_index: u32,
    pub task: Task,
    pub condition: LearningCondition,
    pub master_seed: u64,
    pub episodes: Vec<EpisodeRecord>,
    pub windows: Vec<WindowRecord>,
    pub probes: Vec<ProbeRecord>,
    pub tests: Vec<TestRecord>,
    pub verdict: Option<RunVerdict>,
    pub failure_rule: Option<u8>,
    pub diverged: bool,
}

/// Final parameters and learner state of one run, reloadable for `probe` and
/// `test`. Weight blocks are stored by name with row-major data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub task: Task,
    pub condition: LearningCondition,
    pub actor: Network,
    pub critic: Network,
    pub tracker: SensitivityTracker,
    pub raiser: CriticRaiser,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn from_agent(task: Task, agent: &Agent) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            task,
            condition: agent.condition,
            actor: agent.actor.clone(),
            critic: agent.critic.clone(),
            tracker: agent.tracker.clone(),
            raiser: agent.raiser.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let mut body = serde_json::to_vec_pretty(self)?;
        body.push(b'\n');
        fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let body = fs::read(path)?;
        let cp: Checkpoint = serde_json::from_slice(&body)?;
        if cp.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                cp.version
            )));
        }
        Ok(cp)
    }
}

struct EpisodeStats {
    steps: u32,
    performance: f64,
    reward_sum: f64,
    reward_events: u32,
    penalty_events: u32,
}

fn learn_episode_nav(
    agent: &mut Agent,
    cfg: &ExperimentConfig,
    start: (f64, f64),
    swapped: bool,
    noise_rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<EpisodeStats, Error> {
    let mut env = NavEnv::new(cfg.nav, start, swapped);
    agent.begin_episode();
    for _ in 0..cfg.prep_steps {
        agent.prep_step(&env);
    }
    let mut stats = EpisodeStats {
        steps: 0,
        performance: 0.0,
        reward_sum: 0.0,
        reward_events: 0,
        penalty_events: 0,
    };
    loop {
        let out = agent.learn_step(&mut env, noise_rng)?;
        stats.steps += 1;
        stats.reward_sum += out.reward;
        if out.reward > 0.0 {
            stats.reward_events += 1;
        } else if out.reward < 0.0 {
            stats.penalty_events += 1;
        }
        if out.done {
            break;
        }
    }
    stats.performance = stats.steps as f64;
    Ok(stats)
}

fn learn_episode_crank(
    agent: &mut Agent,
    cfg: &ExperimentConfig,
    theta0: f64,
    reversed: bool,
    noise_rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<EpisodeStats, Error> {
    let mut env = CrankEnv::new(cfg.crank, theta0, reversed);
    agent.begin_episode();
    for _ in 0..cfg.prep_steps {
        agent.prep_step(&env);
    }
    let mut stats = EpisodeStats {
        steps: 0,
        performance: 0.0,
        reward_sum: 0.0,
        reward_events: 0,
        penalty_events: 0,
    };
    loop {
        let out = agent.learn_step(&mut env, noise_rng)?;
        stats.steps += 1;
        stats.reward_sum += out.reward;
        if out.reward > 0.0 {
            stats.reward_events += 1;
        } else if out.reward < 0.0 {
            stats.penalty_events += 1;
        }
        if out.done {
            break;
        }
    }
    stats.performance = crank::revolutions(theta0, env.theta);
    Ok(stats)
}

fn eval_episode_nav(
    actor: &Network,
    nav_cfg: &NavConfig,
    start: (f64, f64),
    swapped: bool,
    prep_steps: u32,
) -> Result<f64, Error> {
    let mut env = NavEnv::new(*nav_cfg, start, swapped);
    let mut state = NetworkState::new(actor);
    for _ in 0..prep_steps {
        actor.step(&mut state, &env.actor_input());
    }
    let mut steps = 0u32;
    loop {
        let out = eval_step(actor, &mut state, &mut env)?;
        steps += 1;
        if out.done {
            return Ok(steps as f64);
        }
    }
}

fn eval_episode_crank(
    actor: &Network,
    crank_cfg: &CrankConfig,
    theta0: f64,
    reversed: bool,
    prep_steps: u32,
) -> Result<f64, Error> {
    let mut env = CrankEnv::new(*crank_cfg, theta0, reversed);
    let mut state = NetworkState::new(actor);
    for _ in 0..prep_steps {
        actor.step(&mut state, &env.actor_input());
    }
    loop {
        let out = eval_step(actor, &mut state, &mut env)?;
        if out.done {
            return Ok(crank::revolutions(theta0, env.theta));
        }
    }
}

/// Evaluation over the 46 grid starts: per-start step counts and their mean.
/// Learning and exploration noise are off.
pub fn nav_test_suite(
    actor: &Network,
    nav_cfg: &NavConfig,
    swapped: bool,
    prep_steps: u32,
) -> Result<(Vec<f64>, f64), Error> {
    let starts = nav::test_grid(nav_cfg);
    let mut per_start = Vec::with_capacity(starts.len());
    for s in starts {
        per_start.push(eval_episode_nav(actor, nav_cfg, s, swapped, prep_steps)?);
    }
    let avg = per_start.iter().sum::<f64>() / per_start.len() as f64;
    Ok((per_start, avg))
}

/// Evaluation over the 50 test angles: per-angle revolutions and their mean.
pub fn crank_test_suite(
    actor: &Network,
    crank_cfg: &CrankConfig,
    reversed: bool,
    prep_steps: u32,
) -> Result<(Vec<f64>, f64), Error> {
    let angles = crank::test_angles();
    let mut per_start = Vec::with_capacity(angles.len());
    for t in angles {
        per_start.push(eval_episode_crank(actor, crank_cfg, t, reversed, prep_steps)?);
    }
    let avg = per_start.iter().sum::<f64>() / per_start.len() as f64;
    Ok((per_start, avg))
}

fn is_divergence(e: &Error) -> bool {
    matches!(
        e,
        Error::NonFiniteOutput { .. } | Error::NonFiniteValue { .. }
    )
}

/// Executes one run end to end. Divergence (non-finite outputs or values)
/// aborts the run and marks the record rather than failing the experiment.
pub fn run_single(cfg: &ExperimentConfig, run: u32) -> Result<(RunRecord, Checkpoint), Error> {
    let mut agent = cfg.build_agent(run);
    let mut starts_rng = stream_rng(cfg.master_seed, run, STREAM_STARTS);
    let mut noise_rng = stream_rng(cfg.master_seed, run, STREAM_NOISE);
    let mut probe_rng = stream_rng(cfg.master_seed, run, STREAM_PROBE);

    let total = cfg.phase1_episodes + cfg.phase2_episodes;
    let mut rec = RunRecord {
        run_index: run,
        task: cfg.task,
        condition: cfg.condition,
        master_seed: cfg.master_seed,
        episodes: Vec::with_capacity(total as usize),
        windows: Vec::new(),
        probes: Vec::new(),
        tests: Vec::new(),
        verdict: None,
        failure_rule: None,
        diverged: false,
    };
    let mut rules = NavFailureRules::new();
    let mut window_acc: Vec<f64> = Vec::with_capacity(cfg.window as usize);

    'run: for episode in 1..=total {
        let in_second_phase = episode > cfg.phase1_episodes;

        if cfg.task == Task::Navigation
            && cfg.probe_every > 0
            && (episode - 1) % cfg.probe_every == 0
        {
            let probed = (|| -> Result<ProbeRecord, Error> {
                let l1 = exploration_exponent_mean(
                    &agent.actor,
                    &cfg.nav,
                    false,
                    &cfg.probe,
                    &mut probe_rng,
                )?;
                let l2 = exploration_exponent_mean(
                    &agent.actor,
                    &cfg.nav,
                    true,
                    &cfg.probe,
                    &mut probe_rng,
                )?;
                Ok(ProbeRecord {
                    episode,
                    lambda_env1: l1,
                    lambda_env2: l2,
                })
            })();
            match probed {
                Ok(p) => rec.probes.push(p),
                Err(e) if is_divergence(&e) => {
                    rec.diverged = true;
                    break 'run;
                }
                Err(e) => return Err(e),
            }
        }

        let stats = match cfg.task {
            Task::Navigation => {
                let start = nav::sample_start(&mut starts_rng, episode - 1, &cfg.nav);
                learn_episode_nav(&mut agent, cfg, start, in_second_phase, &mut noise_rng)
            }
            Task::Crank => {
                let theta0 = crank::sample_initial_angle(&mut starts_rng);
                learn_episode_crank(&mut agent, cfg, theta0, in_second_phase, &mut noise_rng)
            }
        };
        let stats = match stats {
            Ok(s) => s,
            Err(e) if is_divergence(&e) => {
                rec.diverged = true;
                break 'run;
            }
            Err(e) => return Err(e),
        };
        rec.episodes.push(EpisodeRecord {
            episode,
            steps: stats.steps,
            performance: stats.performance,
            reward_sum: stats.reward_sum,
            reward_events: stats.reward_events,
            penalty_events: stats.penalty_events,
        });
        window_acc.push(stats.performance);

        if window_acc.len() == cfg.window as usize {
            let avg = window_acc.iter().sum::<f64>() / window_acc.len() as f64;
            window_acc.clear();
            rec.windows.push(WindowRecord {
                end_episode: episode,
                average: avg,
            });
            if cfg.task == Task::Navigation {
                if let Some(rule) = rules.observe(episode, avg) {
                    rec.failure_rule = Some(rule);
                    break 'run;
                }
            }
        }

        if episode == cfg.phase1_episodes || episode == total {
            let test = match cfg.task {
                Task::Navigation => {
                    nav_test_suite(&agent.actor, &cfg.nav, in_second_phase, cfg.prep_steps)
                }
                Task::Crank => {
                    crank_test_suite(&agent.actor, &cfg.crank, in_second_phase, cfg.prep_steps)
                }
            };
            match test {
                Ok((per_start, average)) => rec.tests.push(TestRecord {
                    after_episode: episode,
                    average,
                    per_start,
                }),
                Err(e) if is_divergence(&e) => {
                    rec.diverged = true;
                    break 'run;
                }
                Err(e) => return Err(e),
            }
        }
    }

    if !rec.diverged {
        let windows: Vec<(u32, f64)> = rec.windows.iter().map(|w| (w.end_episode, w.average)).collect();
        let t1 = rec.tests.first().map(|t| t.average);
        let t2 = rec.tests.get(1).map(|t| t.average);
        let class = match cfg.task {
            Task::Navigation => classify_navigation_run(&windows, t1, t2),
            Task::Crank => classify_crank_run(t1, t2),
        };
        rec.verdict = match class {
            Classification::Verdict(v) => Some(v),
            Classification::Incomplete => None,
        };
    }
    let checkpoint = Checkpoint::from_agent(cfg.task, &agent);
    Ok((rec, checkpoint))
}

/// Runs the whole experiment, parallel across runs. `workers = 0` uses all
/// available cores.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    workers: usize,
) -> Result<Vec<(RunRecord, Checkpoint)>, Error> {
    cfg.validate().map_err(Error::Config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..cfg.runs)
            .into_par_iter()
            .map(|r| run_single(cfg, r))
            .collect()
    })
}

// ---------------------------------------------------------------------------
// Serialization of results
// ---------------------------------------------------------------------------

/// One row of `episodes.csv`. The `steps` column carries the per-episode
/// performance scalar (steps to goal for navigation, signed revolutions for
/// crank); window averages and probe exponents appear only on the episodes
/// where they were computed.
#[derive(Debug, Serialize, Deserialize)]
pub struct CsvRow {
    pub episode: u32,
    pub steps: f64,
    pub reward_sum: f64,
    pub verdict_window_avg: Option<f64>,
    pub lambda_env1: Option<f64>,
    pub lambda_env2: Option<f64>,
}

pub fn episode_rows(rec: &RunRecord) -> Vec<CsvRow> {
    let mut rows: Vec<CsvRow> = rec
        .episodes
        .iter()
        .map(|e| CsvRow {
            episode: e.episode,
            steps: e.performance,
            reward_sum: e.reward_sum,
            verdict_window_avg: None,
            lambda_env1: None,
            lambda_env2: None,
        })
        .collect();
    for w in &rec.windows {
        if let Some(row) = rows.get_mut(w.end_episode as usize - 1) {
            row.verdict_window_avg = Some(w.average);
        }
    }
    for p in &rec.probes {
        if let Some(row) = rows.get_mut(p.episode as usize - 1) {
            row.lambda_env1 = p.lambda_env1;
            row.lambda_env2 = p.lambda_env2;
        }
    }
    rows
}

#[derive(Debug, Serialize, Deserialize)]
struct SummaryRow {
    run: u32,
    verdict: String,
    diverged: bool,
    failure_rule: Option<u8>,
    episodes: u32,
    test1_avg: Option<f64>,
    test2_avg: Option<f64>,
}

fn verdict_name(v: Option<RunVerdict>) -> &'static str {
    match v {
        Some(RunVerdict::Success) => "success",
        Some(RunVerdict::Failure) => "failure",
        Some(RunVerdict::Overrun) => "overrun",
        None => "incomplete",
    }
}

/// Writes the config snapshot, per-run CSV + JSON records + checkpoints, the
/// run summary, and the aggregated learning curve into `dir`.
pub fn write_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    results: &[(RunRecord, Checkpoint)],
) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;

    let mut summary = csv::Writer::from_path(dir.join("summary.csv"))?;
    for (rec, cp) in results {
        let run_dir = dir.join(format!("run_{:03}", rec.run_index));
        fs::create_dir_all(&run_dir)?;

        let mut w = csv::Writer::from_path(run_dir.join("episodes.csv"))?;
        for row in episode_rows(rec) {
            w.serialize(row)?;
        }
        w.flush()?;

        let mut body = serde_json::to_vec_pretty(rec)?;
        body.push(b'\n');
        fs::write(run_dir.join("record.json"), body)?;
        cp.save(&run_dir.join("checkpoint.json"))?;

        summary.serialize(SummaryRow {
            run: rec.run_index,
            verdict: verdict_name(rec.verdict).to_string(),
            diverged: rec.diverged,
            failure_rule: rec.failure_rule,
            episodes: rec.episodes.len() as u32,
            test1_avg: rec.tests.first().map(|t| t.average),
            test2_avg: rec.tests.get(1).map(|t| t.average),
        })?;
    }
    summary.flush()?;

    let records: Vec<&RunRecord> = results.iter().map(|(r, _)| r).collect();
    let curve = curve_over_successes(&records, cfg.window as usize);
    write_curve(&dir.join("curves.csv"), &curve)?;
    Ok(())
}

/// Learning curve over successful runs only.
pub fn curve_over_successes(records: &[&RunRecord], window: usize) -> Vec<CurvePoint> {
    let series: Vec<Vec<f64>> = records
        .iter()
        .filter(|r| r.verdict == Some(RunVerdict::Success))
        .map(|r| r.episodes.iter().map(|e| e.performance).collect())
        .collect();
    learning_curve(&series, window)
}

pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path)?;
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Re-aggregates the learning curve from the `record.json` files under an
/// experiment directory (any directory containing `run_*` subdirectories).
pub fn aggregate_curves_from_dir(dir: &Path, window: usize) -> Result<Vec<CurvePoint>, Error> {
    let mut records = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .map(|n| n.starts_with("run_"))
                    .unwrap_or(false)
        })
        .collect();
    entries.sort();
    for run_dir in entries {
        let body = fs::read(run_dir.join("record.json"))?;
        records.push(serde_json::from_slice::<RunRecord>(&body)?);
    }
    if records.is_empty() {
        return Err(Error::Config(format!(
            "no run_* directories with record.json under {}",
            dir.display()
        )));
    }
    let refs: Vec<&RunRecord> = records.iter().collect();
    Ok(curve_over_successes(&refs, window))
}

/// Reruns the exploration-exponent probe on a checkpointed actor and returns
/// the per-start exponents.
pub fn probe_checkpoint(
    cp: &Checkpoint,
    nav_cfg: &NavConfig,
    probe: &ProbeSettings,
    swapped: bool,
    seed: u64,
) -> Result<Vec<((f64, f64), Option<f64>)>, Error> {
    if cp.task != Task::Navigation {
        return Err(Error::Config(
            "exploration probes are defined for the navigation task".into(),
        ));
    }
    let mut rng = stream_rng(seed, 0, STREAM_PROBE);
    let mut out = Vec::with_capacity(probe.starts.len());
    for &start in &probe.starts {
        let l = crate::metrics::exploration_exponent(
            &cp.actor, nav_cfg, swapped, start, probe, &mut rng,
        )?;
        out.push((start, l));
    }
    Ok(out)
}
