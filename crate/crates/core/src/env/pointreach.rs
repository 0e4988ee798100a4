use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::Canvas;
use super::{ActionBounds, DoneReason, Environment, Observation, StepInfo, StepOutcome};
use crate::error::{Error, Result};

/// Effector-to-target distance normalised by the largest distance in the
/// workspace (opposite corners), capped at 1.
pub fn reach_cost(effector: &[f64], target: &[f64], image_diag: f64) -> f64 {
    let d = effector
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    (d / image_diag).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointReachConfig {
    /// 1 (effector slides along a line) or 2.
    pub dims: usize,
    pub image_size: usize,
    pub max_steps: usize,
    /// Effector displacement per step at full command.
    pub max_speed: f64,
    /// The target jumps to a fresh random spot this often (0 = never).
    pub retarget_every: usize,
}

impl Default for PointReachConfig {
    fn default() -> Self {
        Self {
            dims: 2,
            image_size: 32,
            max_steps: 200,
            max_speed: 0.05,
            retarget_every: 50,
        }
    }
}

/// A point effector in the unit square chasing a target dot. Action is a
/// velocity command in `[-1, 1]^dims`.
#[derive(Debug, Clone)]
pub struct PointReach {
    config: PointReachConfig,
    bounds: ActionBounds,
    effector: Vec<f64>,
    target: Vec<f64>,
    rng: ChaCha8Rng,
    timestep: usize,
    done: bool,
}

impl PointReach {
    pub fn new(config: PointReachConfig) -> Result<Self> {
        if !(1..=2).contains(&config.dims) {
            return Err(Error::InvalidConfig("PointReach supports 1 or 2 dims".into()));
        }
        if config.image_size < 4 || config.max_steps == 0 || !(config.max_speed > 0.0) {
            return Err(Error::InvalidConfig("PointReach sizes must be positive".into()));
        }
        let dims = config.dims;
        Ok(Self {
            bounds: ActionBounds::symmetric(dims, 1.0),
            effector: vec![0.5; dims],
            target: vec![0.5; dims],
            rng: ChaCha8Rng::seed_from_u64(0),
            timestep: 0,
            done: false,
            config,
        })
    }

    pub fn config(&self) -> &PointReachConfig {
        &self.config
    }

    pub fn effector(&self) -> &[f64] {
        &self.effector
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    /// Workspace diagonal: the largest possible effector-target distance.
    pub fn diagonal(&self) -> f64 {
        (self.config.dims as f64).sqrt()
    }

    /// Low-dimensional state `[effector.., target..]`.
    pub fn state_vector(&self) -> Vec<f64> {
        self.effector.iter().chain(&self.target).copied().collect()
    }

    pub fn set_positions(&mut self, effector: &[f64], target: &[f64]) {
        self.effector = effector.to_vec();
        self.target = target.to_vec();
        self.done = false;
    }

    pub fn cost(&self) -> f64 {
        reach_cost(&self.effector, &self.target, self.diagonal())
    }

    fn random_point(&mut self) -> Vec<f64> {
        (0..self.config.dims).map(|_| self.rng.gen_range(0.05..0.95)).collect()
    }

    fn render(&self) -> Observation {
        let n = self.config.image_size;
        let mut canvas = Canvas::new(n, n, 0.15);
        let to_px = |p: &[f64]| {
            let x = p[0] * n as f64 - 0.5;
            let y = if p.len() > 1 { (1.0 - p[1]) * n as f64 - 0.5 } else { n as f64 / 2.0 - 0.5 };
            (x, y)
        };
        let (tx, ty) = to_px(&self.target);
        canvas.blob(tx, ty, 1.2, 0.6);
        let (ex, ey) = to_px(&self.effector);
        canvas.blob(ex, ey, 0.8, 1.0);
        canvas.into_observation()
    }
}

impl Environment for PointReach {
    fn reset(&mut self, seed: u64) -> Observation {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.effector = self.random_point();
        self.target = self.random_point();
        self.timestep = 0;
        self.done = false;
        self.render()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        if action.len() != self.config.dims {
            return Err(Error::ShapeMismatch {
                context: "PointReach action".into(),
                expected: vec![self.config.dims],
                found: vec![action.len()],
            });
        }
        let a = self.bounds.clip(action);
        let before = self.effector.clone();
        for (e, v) in self.effector.iter_mut().zip(&a) {
            *e = (*e + v * self.config.max_speed).clamp(0.0, 1.0);
        }
        self.timestep += 1;
        let moved: Vec<f64> = self.effector.iter().zip(&before).map(|(a, b)| a - b).collect();
        let speed = moved.iter().map(|m| m * m).sum::<f64>().sqrt();
        let to_target: Vec<f64> = self.target.iter().zip(&before).map(|(t, b)| t - b).collect();
        let gap = to_target.iter().map(|m| m * m).sum::<f64>().sqrt();
        let alignment = if speed > 0.0 && gap > 0.0 {
            moved.iter().zip(&to_target).map(|(m, t)| m * t).sum::<f64>() / (speed * gap)
        } else {
            0.0
        };
        let cost = self.cost();
        let d = cost * self.diagonal();
        if self.config.retarget_every > 0 && self.timestep.is_multiple_of(self.config.retarget_every) {
            self.target = self.random_point();
        }
        self.done = self.timestep >= self.config.max_steps;
        Ok(StepOutcome {
            observation: self.render(),
            done: self.done,
            info: StepInfo {
                timestep: self.timestep,
                action: a,
                v: speed,
                alignment,
                d,
                step_return: -cost,
                done_reason: self.done.then_some(DoneReason::TimeLimit),
            },
        })
    }

    fn observe(&self) -> Observation {
        self.render()
    }

    fn action_bounds(&self) -> &ActionBounds {
        &self.bounds
    }

    fn observation_shape(&self) -> (usize, usize) {
        (self.config.image_size, self.config.image_size)
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reach_cost_examples() {
        let diag = 2f64.sqrt();
        assert_eq!(reach_cost(&[0.3, 0.3], &[0.3, 0.3], diag), 0.0);
        assert!((reach_cost(&[0.0, 0.0], &[1.0, 1.0], diag) - 1.0).abs() < 1e-15);
        assert!((reach_cost(&[0.0, 0.0], &[0.5, 0.5], diag) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn reset_is_deterministic() {
        let mut a = PointReach::new(PointReachConfig::default()).unwrap();
        let mut b = PointReach::new(PointReachConfig::default()).unwrap();
        assert_eq!(a.reset(8), b.reset(8));
        for _ in 0..60 {
            let oa = a.step(&[0.3, -0.2]).unwrap();
            let ob = b.step(&[0.3, -0.2]).unwrap();
            assert_eq!(oa.observation, ob.observation);
        }
        assert_eq!(a.target(), b.target());
    }

    #[test]
    fn one_dimensional_variant() {
        let mut e = PointReach::new(PointReachConfig {
            dims: 1,
            ..Default::default()
        })
        .unwrap();
        e.reset(1);
        assert_eq!(e.state_vector().len(), 2);
        e.set_positions(&[0.2], &[0.5]);
        let out = e.step(&[1.0]).unwrap();
        assert!((e.effector()[0] - 0.25).abs() < 1e-12);
        assert_eq!(out.info.alignment, 1.0);
        assert!((out.info.step_return + 0.25).abs() < 1e-12);
    }
}
