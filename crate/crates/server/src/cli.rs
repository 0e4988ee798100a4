//! Command-line interface. Every subcommand builds a [`SessionConfig`] from
//! an optional JSON file plus flag overrides.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dcoach::dcoach::Variant;
use dcoach::env::{Environment, PointReachConfig, TrackDriveConfig, TrackSpec};
use dcoach::fidelity::{gradient_suite, FD_STEP};
use dcoach::nn::Checkpoint;
use dcoach::session::{
    eval_policy, read_feedback_log, replay_session, run_ablation, run_session, Algorithm, Controller, EnvConfig,
    Learner, OracleController, SessionConfig, SessionEnv, SessionSummary, CONFIG_FILE, FEEDBACK_LOG_FILE,
    FINAL_CHECKPOINT, SUMMARY_FILE,
};
use dcoach::teachers::{KeyMap, SimulatedTeacherConfig};
use serde_json::json;

use crate::serve::{serve, ServeOptions};

#[derive(Debug, Parser)]
#[command(name = "dcoach", version, about = "Train continuous-control policies from corrective advice")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train against the simulated teacher.
    TrainSim(TrainSimArgs),
    /// Serve a live session for a human teacher's console.
    TrainHuman(TrainHumanArgs),
    /// Run several variants over several seeds and aggregate their curves.
    Ablation(AblationArgs),
    /// Evaluate a checkpoint, or the scripted oracle, without feedback.
    Eval(EvalArgs),
    /// Re-run a recorded session from its feedback log.
    Replay(ReplayArgs),
    /// Finite-difference gradient checks over every layer kind.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EnvName {
    TrackDrive,
    PointReach,
}

/// Session settings; flags override values read from `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON session config to start from.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub env: Option<EnvName>,
    /// Track file (track-drive only).
    #[arg(long)]
    pub track: Option<PathBuf>,
    /// Observation side length in pixels.
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Point-reach action dimensions (1 or 2).
    #[arg(long)]
    pub reach_dims: Option<usize>,
    /// coach-classic, dcoach-basic or dcoach-enhanced.
    #[arg(long)]
    pub algorithm: Option<Algorithm>,
    /// A, B or C.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Step budget.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Unpaused training time budget in seconds.
    #[arg(long)]
    pub wall_clock_budget: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    /// Correction magnitude per action dimension (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub error_magnitude: Option<Vec<f64>>,
    /// Reconstruction error below which the encoder is frozen.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub policy_lr: Option<f64>,
    #[arg(long)]
    pub ae_lr: Option<f64>,
    #[arg(long)]
    pub buffer_capacity: Option<usize>,
    /// Records needed before batch updates run.
    #[arg(long)]
    pub buffer_min: Option<usize>,
    /// Records per batch update.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Steps between periodic batch updates.
    #[arg(long)]
    pub batch_interval: Option<u64>,
    /// Simulated teacher advice probability at step 0.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Simulated teacher decay rate.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Simulated teacher deadband per dimension (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub deadband: Option<Vec<f64>>,
    /// Feedback-model learning rate (coach-classic).
    #[arg(long)]
    pub beta: Option<f64>,
    /// RBF centres per state dimension (coach-classic).
    #[arg(long)]
    pub grid: Option<usize>,
    /// Demonstration steps recorded before pretraining (dcoach-basic).
    #[arg(long)]
    pub demo_steps: Option<usize>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> anyhow::Result<SessionConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => SessionConfig::default(),
        };
        match (self.env, &cfg.env) {
            (Some(EnvName::TrackDrive), EnvConfig::PointReach(_)) => {
                cfg.env = EnvConfig::TrackDrive(TrackDriveConfig::default())
            }
            (Some(EnvName::PointReach), EnvConfig::TrackDrive(_)) => {
                cfg.env = EnvConfig::PointReach(PointReachConfig::default())
            }
            _ => {}
        }
        match &mut cfg.env {
            EnvConfig::TrackDrive(env) => {
                if let Some(path) = &self.track {
                    env.track = TrackSpec::load(path)?;
                }
                if let Some(n) = self.image_size {
                    env.image_size = n;
                }
                if self.reach_dims.is_some() {
                    bail!("--reach-dims applies to point-reach only");
                }
            }
            EnvConfig::PointReach(env) => {
                if let Some(n) = self.image_size {
                    env.image_size = n;
                }
                if let Some(d) = self.reach_dims {
                    env.dims = d;
                }
                if self.track.is_some() {
                    bail!("--track applies to track-drive only");
                }
            }
        }
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.algorithm, self.algorithm);
        set(&mut cfg.variant, self.variant);
        set(&mut cfg.step_budget, self.steps);
        if self.wall_clock_budget.is_some() {
            cfg.wall_clock_budget_s = self.wall_clock_budget;
        }
        set(&mut cfg.eval_every, self.eval_every);
        set(&mut cfg.eval_episodes, self.eval_episodes);
        if let Some(e) = &self.error_magnitude {
            match cfg.algorithm {
                Algorithm::CoachClassic => cfg.coach.e = Some(e.clone()),
                _ => cfg.dcoach.e = Some(e.clone()),
            }
        }
        set(&mut cfg.dcoach.epsilon, self.epsilon);
        set(&mut cfg.dcoach.policy_lr, self.policy_lr);
        set(&mut cfg.dcoach.ae_lr, self.ae_lr);
        set(&mut cfg.dcoach.buffer.capacity, self.buffer_capacity);
        set(&mut cfg.dcoach.buffer.min_size, self.buffer_min);
        set(&mut cfg.dcoach.buffer.sample_size, self.batch_size);
        set(&mut cfg.dcoach.buffer.update_interval, self.batch_interval);
        if self.alpha.is_some() || self.tau.is_some() || self.deadband.is_some() {
            let base = cfg.teacher_config();
            let deadband = match &self.deadband {
                Some(d) if d.len() == 1 => vec![d[0]; cfg.env.action_dims()],
                Some(d) => d.clone(),
                None => base.deadband,
            };
            cfg.teacher = Some(SimulatedTeacherConfig {
                alpha: self.alpha.unwrap_or(base.alpha),
                tau: self.tau.unwrap_or(base.tau),
                deadband,
            });
        }
        set(&mut cfg.coach.beta, self.beta);
        set(&mut cfg.coach.grid_per_dim, self.grid);
        set(&mut cfg.basic.demo_steps, self.demo_steps);
        set(&mut cfg.basic.pretrain_epochs, self.pretrain_epochs);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}

#[derive(Debug, Args)]
pub struct TrainSimArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Directory for curve, feedback log, checkpoints and summary.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainHumanArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value = "runs/human")]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "human")]
    pub run_id: String,
    /// Address the console connects to.
    #[arg(long, default_value = "127.0.0.1:8765")]
    pub bind: String,
    /// JSON list of {key, dim, direction}; arrow keys by default.
    #[arg(long)]
    pub keymap: Option<PathBuf>,
    /// Training steps per second; 0 runs unthrottled.
    #[arg(long, default_value_t = 20.0)]
    pub step_hz: f64,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value = "ablation")]
    pub out_dir: PathBuf,
    /// Variants to compare (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "A,B,C")]
    pub variants: Vec<Variant>,
    /// Number of seeds, counting up from `--seed`.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate the scripted oracle, the reference for returns.
    #[arg(long)]
    pub oracle: bool,
    /// Defaults to the config's evaluation episode count.
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Output directory of the recorded session.
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Steps to replay; defaults to the recorded session length.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Kink-free trials per layer kind and network.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::TrainSim(a) => train_sim(a),
        Command::TrainHuman(a) => train_human(a),
        Command::Ablation(a) => ablation(a),
        Command::Eval(a) => eval(a),
        Command::Replay(a) => replay(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn train_sim(args: TrainSimArgs) -> anyhow::Result<()> {
    let cfg = args.config.resolve()?;
    let run_id = args
        .run_id
        .unwrap_or_else(|| format!("{}-seed{}", cfg.run_label(), cfg.seed));
    let (_, summary) = run_session(cfg, &run_id, args.out_dir.as_deref())?;
    print_json(&summary)
}

fn train_human(args: TrainHumanArgs) -> anyhow::Result<()> {
    let cfg = args.config.resolve()?;
    let dims = cfg.env.action_dims();
    let mut options = ServeOptions::new(&args.out_dir, dims);
    options.run_id = args.run_id;
    if let Some(path) = &args.keymap {
        options.keymap = KeyMap::load(path, dims)?;
    }
    options.step_interval = match args.step_hz {
        hz if hz == 0.0 => None,
        hz if hz > 0.0 && hz.is_finite() => Some(Duration::from_secs_f64(1.0 / hz)),
        hz => bail!("--step-hz must be positive or 0, got {hz}"),
    };
    log::info!("waiting for a console on ws://{}", args.bind);
    let report = serve(cfg, args.bind.as_str(), options)?;
    print_json(&report)
}

fn ablation(args: AblationArgs) -> anyhow::Result<()> {
    let cfg = args.config.resolve()?;
    let variants: Vec<(String, Variant)> = args.variants.iter().map(|v| (v.as_str().to_string(), *v)).collect();
    let seeds: Vec<u64> = (0..args.seeds).map(|i| cfg.seed + i).collect();
    let reports = run_ablation(&cfg, &variants, &seeds, Some(&args.out_dir))?;
    let rows: Vec<_> = reports
        .iter()
        .map(|r| {
            let finals: Vec<f64> = r.runs.iter().filter_map(|o| o.summary.final_return).collect();
            json!({
                "variant": r.label,
                "runs": r.runs.len(),
                "failures": r.failures,
                "final_returns": finals,
                "final_median": r.by_steps.as_ref().and_then(|b| b.points.last()).map(|p| p.median),
            })
        })
        .collect();
    print_json(&rows)
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let cfg = args.config.resolve()?;
    let mut env = SessionEnv::new(&cfg.env)?;
    let episodes = args.episodes.unwrap_or(cfg.eval_episodes);
    let controller: Box<dyn Controller> = match &args.checkpoint {
        Some(path) => {
            let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            Box::new(Learner::from_checkpoint(&cfg, env.action_bounds(), &ckpt)?)
        }
        None => Box::new(OracleController::from_config(&cfg)),
    };
    let report = eval_policy(controller.as_ref(), &mut env, episodes, cfg.seed)?;
    print_json(&json!({
        "mean_return": report.mean(),
        "returns": report.returns,
        "lengths": report.lengths,
        "off_road": report.off_road,
    }))
}

fn read_summary(run_dir: &Path) -> anyhow::Result<SessionSummary> {
    let path = run_dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn replay(args: ReplayArgs) -> anyhow::Result<()> {
    let cfg = SessionConfig::load(&args.run_dir.join(CONFIG_FILE))?;
    let log_path = args.run_dir.join(FEEDBACK_LOG_FILE);
    let entries = read_feedback_log(BufReader::new(
        File::open(&log_path).with_context(|| format!("opening {}", log_path.display()))?,
    ))?;
    let steps = match args.steps {
        Some(s) => s,
        None => read_summary(&args.run_dir)?.env_steps,
    };
    let logged = entries.len();
    let session = replay_session(cfg, entries, steps, args.out_dir.as_deref())?;
    let mut replayed = Vec::new();
    session.checkpoint()?.write_to(&mut replayed)?;
    let recorded = args.run_dir.join(FINAL_CHECKPOINT);
    let matches = if args.steps.is_none() && recorded.exists() {
        let mut bytes = Vec::new();
        Checkpoint::load(&recorded)?.write_to(&mut bytes)?;
        Some(bytes == replayed)
    } else {
        None
    };
    print_json(&json!({
        "steps": steps,
        "feedback_entries": logged,
        "matches_final_checkpoint": matches,
    }))?;
    if matches == Some(false) {
        bail!("replayed parameters differ from {}", recorded.display());
    }
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> anyhow::Result<()> {
    let results = gradient_suite(args.trials, args.seed, args.tolerance);
    println!("finite-difference step {FD_STEP:e}, tolerance {:e}", args.tolerance);
    for r in &results {
        println!(
            "{:<22} {} trials={} skipped={} failures={} max_rel_error={:.3e}",
            r.subject,
            if r.passed(args.trials) { "ok  " } else { "FAIL" },
            r.trials,
            r.skipped_kinks,
            r.failures,
            r.max_rel_error
        );
    }
    if results.iter().any(|r| !r.passed(args.trials)) {
        bail!("gradient check failed");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Command {
        Cli::try_parse_from(std::iter::once("dcoach").chain(args.iter().copied()))
            .unwrap()
            .command
    }

    #[test]
    fn flags_override_defaults() {
        let Command::TrainSim(a) = parse(&[
            "train-sim",
            "--seed",
            "9",
            "--variant",
            "C",
            "--steps",
            "300",
            "--buffer-min",
            "5",
            "--deadband",
            "0.1",
        ]) else {
            panic!("wrong subcommand")
        };
        let cfg = a.config.resolve().unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.variant, Variant::C);
        assert_eq!(cfg.step_budget, 300);
        assert_eq!(cfg.dcoach.buffer.min_size, 5);
        assert_eq!(cfg.teacher_config().deadband, vec![0.1, 0.1]);
        assert_eq!(cfg.teacher_config().alpha, 0.6);
    }

    #[test]
    fn switching_env_and_algorithm() {
        let Command::TrainSim(a) = parse(&[
            "train-sim",
            "--env",
            "point-reach",
            "--reach-dims",
            "1",
            "--algorithm",
            "coach-classic",
            "--error-magnitude",
            "0.05",
        ]) else {
            panic!("wrong subcommand")
        };
        let cfg = a.config.resolve().unwrap();
        assert_eq!(cfg.env.action_dims(), 1);
        assert_eq!(cfg.coach_config().e, vec![0.05]);
    }

    #[test]
    fn invalid_combinations_are_rejected() {
        let Command::TrainSim(a) = parse(&["train-sim", "--algorithm", "coach-classic"]) else {
            panic!("wrong subcommand")
        };
        assert!(a.config.resolve().is_err());
        assert!(Cli::try_parse_from(["dcoach", "eval"]).is_err());
        assert!(Cli::try_parse_from(["dcoach", "eval", "--oracle", "--checkpoint", "x"]).is_err());
        assert!(Cli::try_parse_from(["dcoach", "train-sim", "--variant", "D"]).is_err());
    }

    #[test]
    fn config_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"seed": 3, "eval_every": 50, "dcoach": {"epsilon": 0.1}}"#).unwrap();
        let Command::Ablation(a) = parse(&["ablation", "--config", path.to_str().unwrap(), "--seed", "4"]) else {
            panic!("wrong subcommand")
        };
        let cfg = a.config.resolve().unwrap();
        assert_eq!((cfg.seed, cfg.eval_every, cfg.dcoach.epsilon), (4, 50, 0.1));
        assert_eq!(a.variants, vec![Variant::A, Variant::B, Variant::C]);
    }
}
