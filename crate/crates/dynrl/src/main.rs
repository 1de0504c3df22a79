//! Command-line front end: experiments, checkpoint evaluation, probes,
//! curve aggregation, and gradient verification.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use dynrl::config::{ExperimentConfig, Task};
use dynrl::gradcheck;
use dynrl::learning::LearningCondition;
use dynrl::metrics::RunVerdict;
use dynrl::runner::{
    aggregate_curves_from_dir, crank_test_suite, nav_test_suite, probe_checkpoint,
    run_experiment, write_curve, write_outputs, Checkpoint,
};

#[derive(Parser)]
#[command(
    name = "dynrl",
    about = "Sensitivity-controlled reinforcement learning benchmarks",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a seeded multi-run learning experiment and write its results.
    Run {
        /// Full config snapshot (TOML); flags below override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Task: navigation | crank.
        #[arg(long)]
        task: Option<String>,
        /// Learning condition: A | A-1 | A-2 | B | B-1 | B-2.
        #[arg(long)]
        condition: Option<String>,
        /// Number of independent runs.
        #[arg(long)]
        runs: Option<u32>,
        /// Episodes in the first learning phase (before the environment
        /// change). Also sets the second phase unless --episodes2 is given.
        #[arg(long)]
        episodes: Option<u32>,
        /// Episodes in the second learning phase.
        #[arg(long)]
        episodes2: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        /// Exploration-exponent probe cadence in episodes (0 = off).
        #[arg(long)]
        probe_every: Option<u32>,
        /// Exploration-noise half-width for the conventional conditions.
        #[arg(long)]
        noise_sigma: Option<f64>,
        /// Worker threads (default: all cores).
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Output directory (default: $DYNRL_OUT or ./dynrl_runs, plus an
        /// experiment-derived name).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure exploration exponents on a checkpointed actor.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Environment variant: Env1 | Env2.
        #[arg(long, default_value = "Env1")]
        env: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Config snapshot for task/probe parameters (defaults otherwise).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the task's test suite (no learning, no noise).
    Test {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Environment variant: Env1 | Env2.
        #[arg(long, default_value = "Env1")]
        env: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Aggregate learning curves from an experiment directory.
    Curves {
        /// Directory containing run_* subdirectories.
        dir: PathBuf,
        /// Window length in episodes (default: from the directory's
        /// config.toml).
        #[arg(long)]
        window: Option<usize>,
        /// Output CSV (default: <dir>/curves.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 12)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
}

fn parse_env_variant(s: &str) -> Result<bool> {
    match s.to_ascii_lowercase().as_str() {
        "env1" | "1" => Ok(false),
        "env2" | "2" => Ok(true),
        _ => bail!("unknown environment variant `{s}` (valid: Env1, Env2)"),
    }
}

fn load_config_for_checkpoint(path: Option<&Path>, cp: &Checkpoint) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            Ok(ExperimentConfig::from_toml(&text)?)
        }
        None => Ok(ExperimentConfig::defaults(cp.task, cp.condition)),
    }
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Run {
            config,
            task,
            condition,
            runs,
            episodes,
            episodes2,
            seed,
            probe_every,
            noise_sigma,
            workers,
            out,
        } => {
            let mut cfg = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading config {}", path.display()))?;
                    ExperimentConfig::from_toml(&text)?
                }
                None => {
                    let task = task
                        .as_deref()
                        .context("--task is required without --config")?;
                    let task = Task::from_str(task).map_err(anyhow::Error::msg)?;
                    let condition = match condition.as_deref() {
                        Some(c) => LearningCondition::from_str(c).map_err(anyhow::Error::msg)?,
                        None => LearningCondition::A,
                    };
                    ExperimentConfig::defaults(task, condition)
                }
            };
            if let Some(c) = condition.as_deref() {
                // Also applies on top of --config.
                cfg.condition = LearningCondition::from_str(c).map_err(anyhow::Error::msg)?;
            }
            if let Some(e) = episodes {
                cfg.phase1_episodes = e;
                cfg.phase2_episodes = episodes2.unwrap_or(e);
            } else if let Some(e2) = episodes2 {
                cfg.phase2_episodes = e2;
            }
            if let Some(r) = runs {
                cfg.runs = r;
            }
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(p) = probe_every {
                cfg.probe_every = p;
            }
            if let Some(n) = noise_sigma {
                cfg.learning.noise_sigma = n;
            }
            cfg.validate().map_err(anyhow::Error::msg)?;

            let dir = out.unwrap_or_else(|| default_out_dir(&cfg));
            eprintln!(
                "running {} × {} on {} (seed {}), writing to {}",
                cfg.runs,
                cfg.condition,
                cfg.task,
                cfg.master_seed,
                dir.display()
            );
            let results = run_experiment(&cfg, workers)?;
            write_outputs(&dir, &cfg, &results)?;

            let mut counts = [0u32; 4];
            for (rec, _) in &results {
                let idx = match (rec.diverged, rec.verdict) {
                    (true, _) => 3,
                    (_, Some(RunVerdict::Success)) => 0,
                    (_, Some(RunVerdict::Failure)) => 1,
                    (_, Some(RunVerdict::Overrun)) => 2,
                    (_, None) => 3,
                };
                counts[idx] += 1;
                println!(
                    "run {:03}: {}{}",
                    rec.run_index,
                    match rec.verdict {
                        Some(RunVerdict::Success) => "success",
                        Some(RunVerdict::Failure) => "failure",
                        Some(RunVerdict::Overrun) => "overrun",
                        None if rec.diverged => "diverged",
                        None => "incomplete",
                    },
                    rec.failure_rule
                        .map(|r| format!(" (rule {r})"))
                        .unwrap_or_default()
                );
            }
            println!(
                "total: {} success, {} failure, {} overrun, {} other",
                counts[0], counts[1], counts[2], counts[3]
            );
            Ok(())
        }
        Cmd::Probe {
            checkpoint,
            env,
            seed,
            config,
        } => {
            let cp = Checkpoint::load(&checkpoint)?;
            let swapped = parse_env_variant(&env)?;
            let cfg = load_config_for_checkpoint(config.as_deref(), &cp)?;
            let results = probe_checkpoint(&cp, &cfg.nav, &cfg.probe, swapped, seed)?;
            let mut sum = 0.0;
            let mut n = 0usize;
            for (start, lambda) in &results {
                match lambda {
                    Some(l) => {
                        println!("start ({:5.1}, {:5.1}): lambda = {:+.6}", start.0, start.1, l);
                        sum += l;
                        n += 1;
                    }
                    None => println!(
                        "start ({:5.1}, {:5.1}): degenerate probe (no measurement)",
                        start.0, start.1
                    ),
                }
            }
            if n > 0 {
                println!("mean lambda over {n} valid probes: {:+.6}", sum / n as f64);
            } else {
                println!("no valid probes");
            }
            Ok(())
        }
        Cmd::Test {
            checkpoint,
            env,
            config,
        } => {
            let cp = Checkpoint::load(&checkpoint)?;
            let variant2 = parse_env_variant(&env)?;
            let cfg = load_config_for_checkpoint(config.as_deref(), &cp)?;
            let (per_start, avg) = match cp.task {
                Task::Navigation => {
                    nav_test_suite(&cp.actor, &cfg.nav, variant2, cfg.prep_steps)?
                }
                Task::Crank => crank_test_suite(&cp.actor, &cfg.crank, variant2, cfg.prep_steps)?,
            };
            for (i, v) in per_start.iter().enumerate() {
                println!("start {i:02}: {v:8.3}");
            }
            println!("average over {} starts: {avg:.3}", per_start.len());
            Ok(())
        }
        Cmd::Curves { dir, window, out } => {
            let window = match window {
                Some(w) => w,
                None => {
                    let text = std::fs::read_to_string(dir.join("config.toml"))
                        .context("no --window given and no config.toml in the directory")?;
                    ExperimentConfig::from_toml(&text)?.window as usize
                }
            };
            let curve = aggregate_curves_from_dir(&dir, window)?;
            let out = out.unwrap_or_else(|| dir.join("curves.csv"));
            write_curve(&out, &curve)?;
            println!(
                "wrote {} windows (window = {window} episodes) to {}",
                curve.len(),
                out.display()
            );
            Ok(())
        }
        Cmd::Gradcheck { seed, samples } => {
            let report = gradcheck::run(seed, samples);
            let rows = [
                (
                    "sensitivity vs finite differences",
                    report.sensitivity_max_rel,
                    gradcheck::TOL_SENSITIVITY,
                ),
                (
                    "SAL/SRL vs sensitivity gradient",
                    report.local_rule_max_rel,
                    gradcheck::TOL_LOCAL_RULE,
                ),
                (
                    "SRL(td=-1) = SAL identity",
                    report.srl_sal_identity_max,
                    gradcheck::TOL_SRL_SAL_IDENTITY,
                ),
                (
                    "critic window gradients",
                    report.critic_bptt_max_rel,
                    gradcheck::TOL_BPTT,
                ),
                (
                    "actor window gradients",
                    report.actor_bptt_max_rel,
                    gradcheck::TOL_BPTT,
                ),
            ];
            for (name, value, tol) in rows {
                println!(
                    "{name:38} max err {value:.3e} (tol {tol:.0e}) {}",
                    if value <= tol { "PASS" } else { "FAIL" }
                );
            }
            if report.pass() {
                Ok(())
            } else {
                bail!("gradient verification failed");
            }
        }
    }
}

fn default_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    let root = std::env::var_os("DYNRL_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("dynrl_runs"));
    root.join(format!(
        "{}_{}_seed{}",
        cfg.task, cfg.condition, cfg.master_seed
    ))
}
