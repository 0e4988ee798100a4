//! Seedable toy environments with grayscale image observations.

mod log;
mod pointreach;
mod render;
mod track;
mod trackdrive;

pub use log::{EpisodeLog, EpisodeLogRow};
pub use pointreach::{reach_cost, PointReach, PointReachConfig};
pub use render::{downsample, Canvas};
pub use track::{wrap_angle, Projection, Track, TrackSpec};
pub use trackdrive::{step_return, Camera, TrackDrive, TrackDriveConfig, VehicleState, RETURN_C, RETURN_D};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Grayscale image with pixels in `[0, 1]`, stored as a `[1, H, W]` tensor so
/// it feeds a network directly.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(Tensor);

impl Observation {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("observation pixels must lie in [0, 1]".into()));
        }
        Ok(Self(Tensor::new(vec![1, height, width], pixels)?))
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn pixels(&self) -> &[f64] {
        self.0.data()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn mean(&self) -> f64 {
        self.0.mean()
    }

    /// 8-bit quantisation, row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels()
            .iter()
            .map(|p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }
}

/// Per-dimension closed action ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl ActionBounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::InvalidConfig("action bounds need matching, non-empty lo/hi".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(Error::InvalidConfig(format!("action bounds need lo < hi: {lo:?} {hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn symmetric(dims: usize, limit: f64) -> Self {
        Self::new(vec![-limit; dims], vec![limit; dims]).expect("positive limit")
    }

    pub fn dims(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn clip(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(a, (l, h))| a.clamp(*l, *h))
            .collect()
    }

    pub fn contains(&self, action: &[f64]) -> bool {
        action.len() == self.dims()
            && action
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(a, (l, h))| (*l..=*h).contains(a))
    }

    /// Half-ranges, `(hi - lo) / 2`.
    pub fn half_ranges(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l) / 2.0).collect()
    }

    /// Affine map from `[-1, 1]` onto the bounds.
    pub fn from_unit(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(u, (l, h))| l + (u + 1.0) * (h - l) / 2.0)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DoneReason {
    OffRoad,
    TimeLimit,
}

impl DoneReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DoneReason::OffRoad => "off-road",
            DoneReason::TimeLimit => "time-limit",
        }
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Timestep within the episode after this step (1-based).
    pub timestep: usize,
    /// Executed (clipped) action.
    pub action: Vec<f64>,
    pub v: f64,
    pub alignment: f64,
    pub d: f64,
    pub step_return: f64,
    pub done_reason: Option<DoneReason>,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Observation,
    pub done: bool,
    pub info: StepInfo,
}

pub trait Environment {
    fn reset(&mut self, seed: u64) -> Observation;
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;
    /// Observation of the current state.
    fn observe(&self) -> Observation;
    fn action_bounds(&self) -> &ActionBounds;
    /// `(height, width)` of observations.
    fn observation_shape(&self) -> (usize, usize);
    fn is_done(&self) -> bool;
    fn max_steps(&self) -> usize;
}
