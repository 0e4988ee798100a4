use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, EnvConfig, SessionConfig};
use crate::coach::{CoachLearner, RbfFeatureMap};
use crate::dcoach::{DCoachAgent, JointNetwork};
use crate::env::{
    ActionBounds, DoneReason, Environment, Observation, PointReach, StepOutcome, TrackDrive,
};
use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::teachers::{FeedbackSignal, Oracle, ReachOracle, TrackOracle};

/// The environments a session can drive.
#[derive(Debug, Clone)]
pub enum SessionEnv {
    Track(TrackDrive),
    Reach(PointReach),
}

impl SessionEnv {
    pub fn new(config: &EnvConfig) -> Result<Self> {
        Ok(match config {
            EnvConfig::TrackDrive(c) => SessionEnv::Track(TrackDrive::new(c.clone())?),
            EnvConfig::PointReach(c) => SessionEnv::Reach(PointReach::new(c.clone())?),
        })
    }

    /// Low-dimensional state, where the environment exposes one.
    pub fn state_vector(&self) -> Option<Vec<f64>> {
        match self {
            SessionEnv::Track(_) => None,
            SessionEnv::Reach(e) => Some(e.state_vector()),
        }
    }

    pub fn oracle_action(&self, track: &TrackOracle, reach: &ReachOracle) -> Vec<f64> {
        match self {
            SessionEnv::Track(e) => track.act(e),
            SessionEnv::Reach(e) => reach.act(e),
        }
    }
}

impl Environment for SessionEnv {
    fn reset(&mut self, seed: u64) -> Observation {
        match self {
            SessionEnv::Track(e) => e.reset(seed),
            SessionEnv::Reach(e) => e.reset(seed),
        }
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        match self {
            SessionEnv::Track(e) => e.step(action),
            SessionEnv::Reach(e) => e.step(action),
        }
    }

    fn observe(&self) -> Observation {
        match self {
            SessionEnv::Track(e) => e.observe(),
            SessionEnv::Reach(e) => e.observe(),
        }
    }

    fn action_bounds(&self) -> &ActionBounds {
        match self {
            SessionEnv::Track(e) => e.action_bounds(),
            SessionEnv::Reach(e) => e.action_bounds(),
        }
    }

    fn observation_shape(&self) -> (usize, usize) {
        match self {
            SessionEnv::Track(e) => e.observation_shape(),
            SessionEnv::Reach(e) => e.observation_shape(),
        }
    }

    fn is_done(&self) -> bool {
        match self {
            SessionEnv::Track(e) => e.is_done(),
            SessionEnv::Reach(e) => e.is_done(),
        }
    }

    fn max_steps(&self) -> usize {
        match self {
            SessionEnv::Track(e) => e.max_steps(),
            SessionEnv::Reach(e) => e.max_steps(),
        }
    }
}

/// Anything that picks actions in a session environment.
pub trait Controller {
    fn act(&self, env: &SessionEnv, obs: &Observation) -> Result<Vec<f64>>;
}

/// The scripted teacher acting on its own; its return is the reference level.
#[derive(Debug, Clone, Default)]
pub struct OracleController {
    pub track: TrackOracle,
    pub reach: ReachOracle,
}

impl OracleController {
    pub fn from_config(config: &SessionConfig) -> Self {
        Self {
            track: config.track_oracle.clone(),
            reach: config.reach_oracle.clone(),
        }
    }
}

impl Controller for OracleController {
    fn act(&self, env: &SessionEnv, _obs: &Observation) -> Result<Vec<f64>> {
        Ok(env.oracle_action(&self.track, &self.reach))
    }
}

/// Learning state of one session.
#[derive(Debug, Clone)]
pub enum Learner {
    Coach(CoachLearner),
    DCoach(DCoachAgent),
}

impl Learner {
    /// Fresh, untrained learner for `config`. Basic-mode pretraining is the
    /// session's job.
    pub fn new(config: &SessionConfig, bounds: &ActionBounds) -> Result<Self> {
        match config.algorithm {
            Algorithm::CoachClassic => {
                let state_dims = 2 * config.env.action_dims();
                let features = RbfFeatureMap::grid(
                    &vec![0.0; state_dims],
                    &vec![1.0; state_dims],
                    &vec![config.coach.grid_per_dim; state_dims],
                )?;
                Ok(Learner::Coach(CoachLearner::new(features, bounds.clone(), config.coach_config())?))
            }
            Algorithm::DcoachBasic | Algorithm::DcoachEnhanced => {
                let size = config.env.image_size();
                let dcfg = config.dcoach_config();
                let with_decoder = config.algorithm == Algorithm::DcoachBasic || dcfg.variant.uses_decoder();
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                let net = JointNetwork::new(&config.architecture()?, (size, size), bounds.clone(), with_decoder, &mut rng)?;
                Ok(Learner::DCoach(DCoachAgent::new(net, dcfg, config.seed ^ SAMPLING_SALT)?))
            }
        }
    }

    /// Rebuilds the learner of `config` and loads `checkpoint` into it.
    pub fn from_checkpoint(config: &SessionConfig, bounds: &ActionBounds, checkpoint: &Checkpoint) -> Result<Self> {
        let mut learner = Self::new(config, bounds)?;
        match &mut learner {
            Learner::Coach(l) => l.restore(checkpoint)?,
            Learner::DCoach(a) => a.net.restore(checkpoint)?,
        }
        Ok(learner)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        match self {
            Learner::Coach(l) => l.checkpoint(),
            Learner::DCoach(a) => a.net.checkpoint(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Learner::Coach(l) => l.policy.weights().iter().chain(l.human_model.weights()).all(|w| w.is_finite()),
            Learner::DCoach(a) => a.net.is_finite(),
        }
    }

    /// Applies one step of learning for the transition taken from `state` /
    /// `obs`. Returns the training label when the algorithm builds one.
    pub fn learn(
        &mut self,
        state: Option<&[f64]>,
        obs: &Observation,
        action: &[f64],
        feedback: Option<&FeedbackSignal>,
        t: u64,
    ) -> Result<Option<Vec<f64>>> {
        match self {
            Learner::Coach(l) => {
                if let Some(fb) = feedback.filter(|f| !f.is_zero()) {
                    let state = state.ok_or_else(|| Error::Contract("coach-classic needs a state vector".into()))?;
                    l.update(state, &fb.h)?;
                }
                Ok(None)
            }
            Learner::DCoach(a) => Ok(a.step(obs, action, feedback, t)?.y_label),
        }
    }
}

/// Stream salt separating the batch-sampling RNG from network initialisation.
const SAMPLING_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

impl Controller for Learner {
    fn act(&self, env: &SessionEnv, obs: &Observation) -> Result<Vec<f64>> {
        match self {
            Learner::Coach(l) => {
                let state = env
                    .state_vector()
                    .ok_or_else(|| Error::Contract("coach-classic needs a state vector".into()))?;
                l.act(&state)
            }
            Learner::DCoach(a) => a.act(obs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub returns: Vec<f64>,
    pub lengths: Vec<usize>,
    pub off_road: usize,
}

impl EvalReport {
    pub fn mean(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len() as f64
    }
}

/// Feedback-free episodes seeded `seed, seed + 1, ...`.
pub fn eval_policy(controller: &dyn Controller, env: &mut SessionEnv, episodes: usize, seed: u64) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::InvalidConfig("evaluation needs at least one episode".into()));
    }
    let mut report = EvalReport {
        returns: Vec::with_capacity(episodes),
        lengths: Vec::with_capacity(episodes),
        off_road: 0,
    };
    for i in 0..episodes as u64 {
        let mut obs = env.reset(seed.wrapping_add(i));
        let mut total = 0.0;
        let mut length = 0;
        loop {
            let action = controller.act(env, &obs)?;
            let out = env.step(&action)?;
            total += out.info.step_return;
            length += 1;
            if out.done {
                if out.info.done_reason == Some(DoneReason::OffRoad) {
                    report.off_road += 1;
                }
                break;
            }
            obs = out.observation;
        }
        report.returns.push(total);
        report.lengths.push(length);
    }
    Ok(report)
}
