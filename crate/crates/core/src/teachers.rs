//! Feedback sources: the simulated teacher (scripted oracle, sign advice,
//! decaying advice probability) and the key-event gateway for human teachers.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{PointReach, TrackDrive};
use crate::error::{Error, Result};

/// Per-dimension corrective advice `h` in `{-1, 0, +1}` for one timestep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackSignal {
    pub h: Vec<i8>,
    pub timestep: u64,
}

impl FeedbackSignal {
    pub fn new(h: Vec<i8>, timestep: u64) -> Result<Self> {
        if h.iter().any(|v| !(-1..=1).contains(v)) {
            return Err(Error::Contract(format!("feedback components must be in {{-1,0,1}}: {h:?}")));
        }
        Ok(Self { h, timestep })
    }

    pub fn is_zero(&self) -> bool {
        self.h.iter().all(|&v| v == 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedTeacherConfig {
    /// Advice probability at `t = 0`, in `[0, 1]`.
    pub alpha: f64,
    /// Exponential decay rate per timestep, `>= 0`.
    pub tau: f64,
    /// No advice on a dimension whose residual is within this band.
    pub deadband: Vec<f64>,
}

impl SimulatedTeacherConfig {
    pub fn new(alpha: f64, tau: f64, deadband: Vec<f64>) -> Result<Self> {
        let cfg = Self { alpha, tau, deadband };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `alpha = 0.6`, `tau = 0.000015`, deadband 0.05 on every dimension.
    pub fn standard(action_dims: usize) -> Self {
        Self {
            alpha: 0.6,
            tau: 0.000015,
            deadband: vec![0.05; action_dims],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha must be in [0,1], got {}", self.alpha)));
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidConfig(format!("tau must be >= 0, got {}", self.tau)));
        }
        if self.deadband.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::InvalidConfig("deadband must be >= 0".into()));
        }
        Ok(())
    }
}

/// `P_h = alpha * exp(-tau * t)`.
pub fn feedback_probability(t: u64, config: &SimulatedTeacherConfig) -> f64 {
    config.alpha * (-config.tau * t as f64).exp()
}

/// `h = sign(a_teacher - a_agent)` per dimension, zero inside the deadband.
pub fn sign_advice(a_teacher: &[f64], a_agent: &[f64], deadband: &[f64]) -> Vec<i8> {
    assert_eq!(a_teacher.len(), a_agent.len(), "action dimension mismatch");
    a_teacher
        .iter()
        .zip(a_agent)
        .enumerate()
        .map(|(i, (t, a))| {
            let diff = t - a;
            let band = deadband.get(i).copied().unwrap_or(0.0);
            if diff.abs() <= band {
                0
            } else if diff > 0.0 {
                1
            } else {
                -1
            }
        })
        .collect()
}

/// With probability `P_h(t)`, advise `sign_advice`; otherwise stay silent.
/// Consumes exactly one uniform draw from `rng` per call.
pub fn decide_feedback<R: Rng + ?Sized>(
    t: u64,
    a_teacher: &[f64],
    a_agent: &[f64],
    rng: &mut R,
    config: &SimulatedTeacherConfig,
) -> Option<FeedbackSignal> {
    let draw: f64 = rng.gen();
    (draw < feedback_probability(t, config)).then(|| FeedbackSignal {
        h: sign_advice(a_teacher, a_agent, &config.deadband),
        timestep: t,
    })
}

/// Scripted high-performance controller with privileged access to the
/// environment state.
pub trait Oracle {
    type Env;
    fn act(&self, env: &Self::Env) -> Vec<f64>;
}

/// Pure-pursuit steering toward a lookahead point on the path, with a
/// proportional throttle holding a cruise speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackOracle {
    pub lookahead: f64,
    pub cruise_speed: f64,
    pub speed_gain: f64,
}

impl Default for TrackOracle {
    fn default() -> Self {
        Self {
            lookahead: 1.0,
            cruise_speed: 0.1,
            speed_gain: 2.0,
        }
    }
}

impl Oracle for TrackOracle {
    type Env = TrackDrive;

    fn act(&self, env: &TrackDrive) -> Vec<f64> {
        let s = env.state();
        let track = env.track();
        let cfg = env.config();
        let proj = track.project(s.position);
        let goal = track.point_at(proj.arclength + self.lookahead);
        let (dx, dy) = (goal[0] - s.position[0], goal[1] - s.position[1]);
        let dist = (dx * dx + dy * dy).sqrt().max(1e-6);
        let bearing = crate::env::wrap_angle(dy.atan2(dx) - s.heading);
        let curvature = 2.0 * bearing.sin() / dist;
        // Positive steer turns clockwise.
        let steer = (-curvature / cfg.max_curvature).clamp(-1.0, 1.0);
        let hold = cfg.drag * self.cruise_speed / cfg.max_accel;
        let throttle =
            (hold + self.speed_gain * (self.cruise_speed - s.speed) / cfg.max_accel).clamp(0.0, 1.0);
        vec![steer, throttle]
    }
}

/// Proportional velocity command toward the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachOracle {
    pub gain: f64,
}

impl Default for ReachOracle {
    fn default() -> Self {
        Self { gain: 5.0 }
    }
}

impl ReachOracle {
    /// Oracle action for an explicit `[effector.., target..]` state vector.
    pub fn act_on_state(&self, state: &[f64]) -> Vec<f64> {
        let dims = state.len() / 2;
        (0..dims)
            .map(|i| (self.gain * (state[dims + i] - state[i])).clamp(-1.0, 1.0))
            .collect()
    }
}

impl Oracle for ReachOracle {
    type Env = PointReach;

    fn act(&self, env: &PointReach) -> Vec<f64> {
        self.act_on_state(&env.state_vector())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyBinding {
    pub key: String,
    pub dim: usize,
    pub direction: i8,
}

/// Key-to-advice table. One key may appear in several entries, which couples
/// its correction across dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyMap {
    pub entries: Vec<KeyBinding>,
}

impl KeyMap {
    pub fn new(entries: Vec<KeyBinding>, action_dims: usize) -> Result<Self> {
        let map = Self { entries };
        map.validate(action_dims)?;
        Ok(map)
    }

    /// Arrow keys: left/right on dimension 0 (steer), up/down on dimension 1.
    /// With a third (brake) dimension, up/down also push it the opposite way.
    pub fn arrows(action_dims: usize) -> Self {
        let b = |key: &str, dim, direction| KeyBinding {
            key: key.into(),
            dim,
            direction,
        };
        let mut entries = vec![b("ArrowLeft", 0, -1), b("ArrowRight", 0, 1)];
        if action_dims >= 2 {
            entries.push(b("ArrowUp", 1, 1));
            entries.push(b("ArrowDown", 1, -1));
        }
        if action_dims >= 3 {
            entries.push(b("ArrowUp", 2, -1));
            entries.push(b("ArrowDown", 2, 1));
        }
        Self { entries }
    }

    pub fn validate(&self, action_dims: usize) -> Result<()> {
        for e in &self.entries {
            if e.dim >= action_dims {
                return Err(Error::InvalidConfig(format!(
                    "key {:?} targets dimension {} of a {action_dims}-d action",
                    e.key, e.dim
                )));
            }
            if e.direction != 1 && e.direction != -1 {
                return Err(Error::InvalidConfig(format!(
                    "key {:?} direction must be -1 or +1",
                    e.key
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path, action_dims: usize) -> Result<Self> {
        let map: KeyMap = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        map.validate(action_dims)?;
        Ok(map)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Advice from the set of keys held this frame. Unknown keys are ignored and
/// opposing keys on the same dimension cancel.
pub fn keys_to_feedback<S: AsRef<str>>(
    pressed: &[S],
    keymap: &KeyMap,
    action_dims: usize,
    timestep: u64,
) -> FeedbackSignal {
    let mut sums = vec![0i32; action_dims];
    for key in pressed {
        for e in keymap.entries.iter().filter(|e| e.key == key.as_ref()) {
            if let Some(s) = sums.get_mut(e.dim) {
                *s += e.direction as i32;
            }
        }
    }
    FeedbackSignal {
        h: sums.into_iter().map(|s| s.signum() as i8).collect(),
        timestep,
    }
}
