use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coach::CoachConfig;
use crate::dcoach::{Architecture, BufferConfig, DCoachConfig, Mode, Variant};
use crate::env::{PointReachConfig, TrackDriveConfig};
use crate::error::{Error, Result};
use crate::teachers::{ReachOracle, SimulatedTeacherConfig, TrackOracle};

/// Which environment a session drives, with its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum EnvConfig {
    TrackDrive(TrackDriveConfig),
    PointReach(PointReachConfig),
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::TrackDrive(TrackDriveConfig::default())
    }
}

impl EnvConfig {
    pub fn action_dims(&self) -> usize {
        match self {
            EnvConfig::TrackDrive(_) => 2,
            EnvConfig::PointReach(c) => c.dims,
        }
    }

    pub fn image_size(&self) -> usize {
        match self {
            EnvConfig::TrackDrive(c) => c.image_size,
            EnvConfig::PointReach(c) => c.image_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Linear policy on RBF state features with a learned feedback model.
    CoachClassic,
    /// Demonstrations, autoencoder pretraining, then frozen-encoder corrections.
    DcoachBasic,
    /// Joint policy and autoencoder learning from corrections alone.
    DcoachEnhanced,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::CoachClassic => "coach-classic",
            Algorithm::DcoachBasic => "dcoach-basic",
            Algorithm::DcoachEnhanced => "dcoach-enhanced",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coach-classic" => Ok(Algorithm::CoachClassic),
            "dcoach-basic" => Ok(Algorithm::DcoachBasic),
            "dcoach-enhanced" => Ok(Algorithm::DcoachEnhanced),
            other => Err(Error::InvalidConfig(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DCoachParams {
    /// Correction magnitude per action dimension; `None` uses 0.3 everywhere.
    pub e: Option<Vec<f64>>,
    pub epsilon: f64,
    pub policy_lr: f64,
    pub ae_lr: f64,
    pub buffer: BufferConfig,
    /// `None` uses the standard stack for the observation size.
    pub architecture: Option<Architecture>,
}

impl Default for DCoachParams {
    fn default() -> Self {
        Self {
            e: None,
            epsilon: 0.02,
            policy_lr: 0.05,
            ae_lr: 0.05,
            buffer: BufferConfig::default(),
            architecture: None,
        }
    }
}

/// Demonstration and pretraining schedule of the basic mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasicParams {
    pub demo_steps: usize,
    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,
}

impl Default for BasicParams {
    fn default() -> Self {
        Self {
            demo_steps: 1000,
            pretrain_epochs: 10,
            pretrain_batch: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoachParams {
    pub e: Option<Vec<f64>>,
    pub beta: f64,
    /// RBF centres per state dimension.
    pub grid_per_dim: usize,
}

impl Default for CoachParams {
    fn default() -> Self {
        Self {
            e: None,
            beta: 0.02,
            grid_per_dim: 21,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub env: EnvConfig,
    pub algorithm: Algorithm,
    pub variant: Variant,
    pub dcoach: DCoachParams,
    pub basic: BasicParams,
    pub coach: CoachParams,
    /// `None` uses alpha 0.6, tau 0.000015 and a 0.05 deadband.
    pub teacher: Option<SimulatedTeacherConfig>,
    pub track_oracle: TrackOracle,
    pub reach_oracle: ReachOracle,
    pub seed: u64,
    pub step_budget: u64,
    /// Optional cap on unpaused training time.
    pub wall_clock_budget_s: Option<f64>,
    pub eval_every: u64,
    pub eval_episodes: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            algorithm: Algorithm::DcoachEnhanced,
            variant: Variant::A,
            dcoach: DCoachParams::default(),
            basic: BasicParams::default(),
            coach: CoachParams::default(),
            teacher: None,
            track_oracle: TrackOracle::default(),
            reach_oracle: ReachOracle::default(),
            seed: 0,
            step_budget: 5000,
            wall_clock_budget_s: None,
            eval_every: 500,
            eval_episodes: 3,
        }
    }
}

impl SessionConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return Err(Error::InvalidConfig("evaluation cadence and episode count must be positive".into()));
        }
        if let Some(s) = self.wall_clock_budget_s {
            if !(s > 0.0) {
                return Err(Error::InvalidConfig("wall-clock budget must be positive".into()));
            }
        }
        let dims = self.env.action_dims();
        self.teacher_config().validate()?;
        if self.teacher_config().deadband.len() != dims {
            return Err(Error::InvalidConfig(format!("teacher deadband needs {dims} entries")));
        }
        match self.algorithm {
            Algorithm::CoachClassic => {
                if !matches!(self.env, EnvConfig::PointReach(_)) {
                    return Err(Error::InvalidConfig(
                        "coach-classic needs a low-dimensional state and runs on point-reach only".into(),
                    ));
                }
                if self.coach.grid_per_dim < 2 {
                    return Err(Error::InvalidConfig("coach grid needs >= 2 centres per dimension".into()));
                }
                self.coach_config().validate(dims)?;
            }
            Algorithm::DcoachBasic => {
                if self.variant != Variant::A {
                    return Err(Error::InvalidConfig("variants apply to dcoach-enhanced only".into()));
                }
                if self.basic.demo_steps == 0 || self.basic.pretrain_batch == 0 {
                    return Err(Error::InvalidConfig("basic mode needs demonstrations and a batch size".into()));
                }
                self.dcoach_config().validate(dims)?;
            }
            Algorithm::DcoachEnhanced => self.dcoach_config().validate(dims)?,
        }
        Ok(())
    }

    pub fn teacher_config(&self) -> SimulatedTeacherConfig {
        self.teacher
            .clone()
            .unwrap_or_else(|| SimulatedTeacherConfig::standard(self.env.action_dims()))
    }

    pub fn dcoach_config(&self) -> DCoachConfig {
        let dims = self.env.action_dims();
        DCoachConfig {
            e: self.dcoach.e.clone().unwrap_or_else(|| vec![0.3; dims]),
            epsilon: self.dcoach.epsilon,
            policy_lr: self.dcoach.policy_lr,
            ae_lr: self.dcoach.ae_lr,
            mode: if self.algorithm == Algorithm::DcoachBasic {
                Mode::Basic
            } else {
                Mode::Enhanced
            },
            variant: self.variant,
            buffer: self.dcoach.buffer,
        }
    }

    pub fn coach_config(&self) -> CoachConfig {
        let dims = self.env.action_dims();
        CoachConfig {
            e: self.coach.e.clone().unwrap_or_else(|| vec![0.03; dims]),
            beta: self.coach.beta,
        }
    }

    pub fn architecture(&self) -> Result<Architecture> {
        match &self.dcoach.architecture {
            Some(a) => Ok(a.clone()),
            None => Architecture::standard(self.env.image_size(), self.env.action_dims()),
        }
    }

    /// Label used in curve files: the variant for the enhanced mode, the
    /// algorithm name otherwise.
    pub fn run_label(&self) -> String {
        match self.algorithm {
            Algorithm::DcoachEnhanced => self.variant.as_str().to_string(),
            other => other.as_str().to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = SessionConfig::default();
        cfg.validate().unwrap();
        let back: SessionConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: SessionConfig = serde_json::from_str(
            r#"{"env": {"name": "point-reach", "dims": 1}, "algorithm": "coach-classic", "seed": 4}"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.env.action_dims(), 1);
        assert_eq!(cfg.dcoach.buffer, BufferConfig::default());
    }

    #[test]
    fn coach_classic_rejects_images_only_env() {
        let cfg = SessionConfig {
            algorithm: Algorithm::CoachClassic,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn basic_mode_has_no_variants() {
        let cfg = SessionConfig {
            algorithm: Algorithm::DcoachBasic,
            variant: Variant::C,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
