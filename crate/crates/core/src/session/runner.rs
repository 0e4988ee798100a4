use std::collections::VecDeque;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::clock::ActiveClock;
use super::config::{Algorithm, SessionConfig};
use super::curve::{CurvePoint, CurveWriter, LearningCurve};
use super::feedback_log::{FeedbackLogEntry, FeedbackLogWriter};
use super::policy::{eval_policy, Controller, EvalReport, Learner, SessionEnv};
use super::teacher::{ReplayTeacher, SimulatedTeacher, Teacher};
use crate::dcoach::{pretrain_autoencoder, record_demonstrations, PretrainReport};
use crate::env::{Environment, Observation};
use crate::error::{Error, Result};
use crate::nn::Checkpoint;

/// Independent random streams derived from the session seed.
const EPISODE_STREAM: u64 = 1;
const TEACHER_STREAM: u64 = 2;
const PRETRAIN_STREAM: u64 = 3;
/// Evaluation episodes use seeds far from any training episode.
const EVAL_SEED_OFFSET: u64 = 1 << 62;
/// Steps over which the live feedback rate is measured.
const RATE_WINDOW: usize = 100;

pub const CURVE_FILE: &str = "curve.csv";
pub const FEEDBACK_LOG_FILE: &str = "feedback.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Teacher driven by the session's own oracle settings and seed.
pub fn simulated_teacher(config: &SessionConfig) -> SimulatedTeacher {
    SimulatedTeacher::new(
        config.teacher_config(),
        config.track_oracle.clone(),
        config.reach_oracle.clone(),
        stream(config.seed, TEACHER_STREAM),
    )
}

/// First seed of the evaluation episodes of a session.
pub fn eval_seed(config: &SessionConfig) -> u64 {
    EVAL_SEED_OFFSET.wrapping_add(config.seed.wrapping_mul(1 << 16))
}

/// What happened during one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Index of the executed step.
    pub t: u64,
    /// Executed (clipped) action.
    pub action: Vec<f64>,
    /// Nonzero advice that was learned from.
    pub feedback: Option<Vec<i8>>,
    pub y_label: Option<Vec<f64>>,
    pub step_return: f64,
    /// Return of the episode that ended on this step.
    pub finished_episode: Option<f64>,
    /// Curve point recorded after this step.
    pub evaluation: Option<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub run_id: String,
    pub algorithm: Algorithm,
    pub variant: String,
    pub seed: u64,
    pub env_steps: u64,
    pub corrections: u64,
    pub demonstration_steps: u64,
    pub teacher_labels: u64,
    /// Unpaused training time.
    pub active_s: f64,
    /// Elapsed time including pauses and evaluation.
    pub total_s: f64,
    pub final_return: Option<f64>,
    pub pretrain: Option<PretrainSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl From<PretrainReport> for PretrainSummary {
    fn from(r: PretrainReport) -> Self {
        Self {
            initial_loss: r.initial_loss,
            final_loss: r.final_loss,
        }
    }
}

struct Outputs {
    dir: PathBuf,
    curve: CurveWriter<File>,
    log: FeedbackLogWriter<BufWriter<File>>,
}

impl Outputs {
    fn create(dir: &Path, config: &SessionConfig) -> Result<Self> {
        std::fs::create_dir_all(dir.join(CHECKPOINT_DIR))?;
        config.save(&dir.join(CONFIG_FILE))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            curve: CurveWriter::new(File::create(dir.join(CURVE_FILE))?)?,
            log: FeedbackLogWriter::new(BufWriter::new(File::create(dir.join(FEEDBACK_LOG_FILE))?)),
        })
    }
}

/// One training run: environment, learner, curve and bookkeeping. Teachers
/// are passed to each step so a live gateway and a simulated teacher drive
/// the same loop.
pub struct Session {
    config: SessionConfig,
    env: SessionEnv,
    eval_env: SessionEnv,
    learner: Learner,
    episode_rng: ChaCha8Rng,
    obs: Observation,
    t: u64,
    episode_return: f64,
    last_action: Vec<f64>,
    curve: LearningCurve,
    clock: ActiveClock,
    corrections: u64,
    demonstration_steps: u64,
    recent_feedback: VecDeque<bool>,
    pretrain: Option<PretrainSummary>,
    outputs: Option<Outputs>,
}

impl Session {
    /// Builds the learner (running the demonstration and pretraining phase
    /// in basic mode) and starts the clock. With `out_dir`, curve, feedback
    /// log, checkpoints and summary are written there.
    pub fn new(config: SessionConfig, run_id: &str, out_dir: Option<&Path>) -> Result<Self> {
        config.validate()?;
        let outputs = out_dir.map(|d| Outputs::create(d, &config)).transpose()?;
        let mut clock = ActiveClock::new();
        clock.resume();
        let mut env = SessionEnv::new(&config.env)?;
        let eval_env = env.clone();
        let mut learner = Learner::new(&config, env.action_bounds())?;
        let mut episode_rng = stream(config.seed, EPISODE_STREAM);
        let mut pretrain = None;
        let mut demonstration_steps = 0;
        if config.algorithm == Algorithm::DcoachBasic {
            let Learner::DCoach(agent) = &mut learner else {
                unreachable!("basic mode builds a D-COACH learner")
            };
            let (track, reach) = (config.track_oracle.clone(), config.reach_oracle.clone());
            let mut demo_env = env.clone();
            let demos = record_demonstrations(
                &mut demo_env,
                |e: &SessionEnv| e.oracle_action(&track, &reach),
                config.basic.demo_steps,
                episode_rng.gen(),
            )?;
            let report = pretrain_autoencoder(
                &mut agent.net,
                &demos,
                config.basic.pretrain_epochs,
                config.basic.pretrain_batch,
                config.dcoach.ae_lr,
                &mut stream(config.seed, PRETRAIN_STREAM),
            )?;
            pretrain = Some(report.into());
            demonstration_steps = demos.len() as u64;
        }
        let obs = env.reset(episode_rng.gen());
        let dims = config.env.action_dims();
        Ok(Self {
            curve: LearningCurve::new(run_id, config.run_label(), config.seed),
            config,
            env,
            eval_env,
            learner,
            episode_rng,
            obs,
            t: 0,
            episode_return: 0.0,
            last_action: vec![0.0; dims],
            clock,
            corrections: 0,
            demonstration_steps,
            recent_feedback: VecDeque::with_capacity(RATE_WINDOW),
            pretrain,
            outputs,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn env(&self) -> &SessionEnv {
        &self.env
    }

    /// Steps executed so far; also the index of the next step.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Observation the next action will be chosen from.
    pub fn observation(&self) -> &Observation {
        &self.obs
    }

    pub fn last_action(&self) -> &[f64] {
        &self.last_action
    }

    /// Return accumulated in the current episode.
    pub fn episode_return(&self) -> f64 {
        self.episode_return
    }

    /// Fraction of recent steps that carried nonzero advice.
    pub fn feedback_rate(&self) -> f64 {
        if self.recent_feedback.is_empty() {
            0.0
        } else {
            self.recent_feedback.iter().filter(|&&f| f).count() as f64 / self.recent_feedback.len() as f64
        }
    }

    pub fn curve(&self) -> &LearningCurve {
        &self.curve
    }

    pub fn corrections(&self) -> u64 {
        self.corrections
    }

    pub fn teacher_labels(&self) -> u64 {
        self.corrections + self.demonstration_steps
    }

    pub fn clock(&self) -> &ActiveClock {
        &self.clock
    }

    pub fn pause_clock(&mut self) {
        self.clock.pause();
    }

    pub fn resume_clock(&mut self) {
        self.clock.resume();
    }

    pub fn out_dir(&self) -> Option<&Path> {
        self.outputs.as_ref().map(|o| o.dir.as_path())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        self.learner.checkpoint()
    }

    pub fn budget_exhausted(&self) -> bool {
        self.t >= self.config.step_budget
            || self
                .config
                .wall_clock_budget_s
                .is_some_and(|limit| self.clock.active_s() >= limit)
    }

    /// Acts, asks `teacher` for advice, steps the environment and learns.
    /// Records a curve point whenever the step count hits the evaluation
    /// cadence.
    pub fn step(&mut self, teacher: &mut dyn Teacher) -> Result<StepRecord> {
        let t = self.t;
        let state = self.env.state_vector();
        let action = self.learner.act(&self.env, &self.obs)?;
        let feedback = teacher.feedback(t, &self.env, &action)?;
        let out = self.env.step(&action)?;
        let y_label = self
            .learner
            .learn(state.as_deref(), &self.obs, &action, feedback.as_ref(), t)?;
        if !self.learner.is_finite() {
            return Err(Error::Diverged(format!("non-finite parameters after step {t}")));
        }
        let applied = feedback.filter(|f| !f.is_zero()).map(|f| f.h);
        if let Some(h) = &applied {
            self.corrections += 1;
            teacher.applied(t, h, y_label.as_deref())?;
            if let Some(o) = &mut self.outputs {
                o.log.write(&FeedbackLogEntry {
                    timestep: t,
                    h: h.clone(),
                    y_label: y_label.clone(),
                })?;
            }
        }
        if self.recent_feedback.len() == RATE_WINDOW {
            self.recent_feedback.pop_front();
        }
        self.recent_feedback.push_back(applied.is_some());

        self.episode_return += out.info.step_return;
        self.last_action = out.info.action.clone();
        let finished_episode = if out.done {
            let finished = self.episode_return;
            self.episode_return = 0.0;
            self.obs = self.env.reset(self.episode_rng.gen());
            Some(finished)
        } else {
            self.obs = out.observation;
            None
        };
        self.t += 1;
        let evaluation = if self.t.is_multiple_of(self.config.eval_every) {
            Some(self.record_evaluation()?)
        } else {
            None
        };
        Ok(StepRecord {
            t,
            action: out.info.action,
            feedback: applied,
            y_label,
            step_return: out.info.step_return,
            finished_episode,
            evaluation,
        })
    }

    /// Feedback-free evaluation of the current policy on the session's fixed
    /// evaluation seeds. The clock is paused meanwhile.
    pub fn evaluate(&mut self) -> Result<EvalReport> {
        let was_running = self.clock.is_running();
        self.clock.pause();
        let report = eval_policy(
            &self.learner as &dyn Controller,
            &mut self.eval_env,
            self.config.eval_episodes,
            eval_seed(&self.config),
        );
        if was_running {
            self.clock.resume();
        }
        report
    }

    fn record_evaluation(&mut self) -> Result<CurvePoint> {
        let report = self.evaluate()?;
        let point = CurvePoint {
            wall_clock_s: self.clock.active_s(),
            env_steps: self.t,
            episode_return: report.mean(),
            teacher_labels: self.teacher_labels(),
        };
        self.curve.push(point)?;
        if let Some(o) = &mut self.outputs {
            o.curve.write(&self.curve, &point)?;
            let path = o.dir.join(CHECKPOINT_DIR).join(format!("step_{:08}.ckpt", self.t));
            self.learner.checkpoint()?.save(&path)?;
        }
        Ok(point)
    }

    /// Writes the current parameters next to the periodic checkpoints and
    /// returns the path.
    pub fn save_checkpoint(&self) -> Result<PathBuf> {
        let o = self
            .outputs
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("session has no output directory".into()))?;
        let path = o.dir.join(CHECKPOINT_DIR).join(format!("manual_{:08}.ckpt", self.t));
        self.learner.checkpoint()?.save(&path)?;
        Ok(path)
    }

    /// Steps until the budget is spent.
    pub fn run(&mut self, teacher: &mut dyn Teacher) -> Result<SessionSummary> {
        while !self.budget_exhausted() {
            self.step(teacher)?;
        }
        self.finish()
    }

    /// Exactly `steps` more steps, ignoring the budget.
    pub fn run_steps(&mut self, steps: u64, teacher: &mut dyn Teacher) -> Result<()> {
        for _ in 0..steps {
            self.step(teacher)?;
        }
        Ok(())
    }

    /// Closes the run: a last curve point if the final step was not
    /// evaluated, the final checkpoint and the summary.
    pub fn finish(&mut self) -> Result<SessionSummary> {
        if self.t > 0 && self.curve.last().map(|p| p.env_steps) != Some(self.t) {
            self.record_evaluation()?;
        }
        self.clock.pause();
        let summary = self.summary();
        if let Some(o) = &self.outputs {
            self.learner.checkpoint()?.save(&o.dir.join(FINAL_CHECKPOINT))?;
            std::fs::write(o.dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
        }
        Ok(summary)
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            run_id: self.curve.run_id.clone(),
            algorithm: self.config.algorithm,
            variant: self.curve.variant.clone(),
            seed: self.config.seed,
            env_steps: self.t,
            corrections: self.corrections,
            demonstration_steps: self.demonstration_steps,
            teacher_labels: self.teacher_labels(),
            active_s: self.clock.active_s(),
            total_s: self.clock.total_s(),
            final_return: self.curve.last().map(|p| p.episode_return),
            pretrain: self.pretrain,
        }
    }
}

/// Simulated-teacher session from start to budget.
pub fn run_session(config: SessionConfig, run_id: &str, out_dir: Option<&Path>) -> Result<(Session, SessionSummary)> {
    let mut teacher = simulated_teacher(&config);
    let mut session = Session::new(config, run_id, out_dir)?;
    let summary = session.run(&mut teacher)?;
    Ok((session, summary))
}

/// Re-runs a session for `steps` steps with advice taken from a feedback
/// log, failing as soon as a label differs from the logged one.
pub fn replay_session(
    config: SessionConfig,
    entries: Vec<FeedbackLogEntry>,
    steps: u64,
    out_dir: Option<&Path>,
) -> Result<Session> {
    if let Some(last) = entries.last() {
        if last.timestep >= steps {
            return Err(Error::InvalidConfig(format!(
                "log reaches step {} but only {steps} steps are replayed",
                last.timestep
            )));
        }
    }
    let mut teacher = ReplayTeacher::new(entries);
    let mut session = Session::new(config, "replay", out_dir)?;
    session.run_steps(steps, &mut teacher)?;
    if teacher.remaining() > 0 {
        return Err(Error::Contract(format!("{} logged entries were never replayed", teacher.remaining())));
    }
    Ok(session)
}
