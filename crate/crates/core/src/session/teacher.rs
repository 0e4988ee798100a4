use std::collections::VecDeque;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::feedback_log::FeedbackLogEntry;
use super::policy::SessionEnv;
use crate::dcoach::FeedbackQueue;
use crate::error::{Error, Result};
use crate::teachers::{decide_feedback, FeedbackSignal, ReachOracle, SimulatedTeacherConfig, TrackOracle};

/// Source of corrective advice for a running session.
pub trait Teacher {
    /// Advice for step `t`, given the environment before the agent's
    /// `action` is executed.
    fn feedback(&mut self, t: u64, env: &SessionEnv, action: &[f64]) -> Result<Option<FeedbackSignal>>;

    /// Called after nonzero advice has been learned from, with the label it
    /// produced.
    fn applied(&mut self, _t: u64, _h: &[i8], _y_label: Option<&[f64]>) -> Result<()> {
        Ok(())
    }
}

/// Oracle-driven sign advice given with decaying probability.
pub struct SimulatedTeacher {
    pub config: SimulatedTeacherConfig,
    pub track: TrackOracle,
    pub reach: ReachOracle,
    rng: ChaCha8Rng,
}

impl SimulatedTeacher {
    pub fn new(config: SimulatedTeacherConfig, track: TrackOracle, reach: ReachOracle, rng: ChaCha8Rng) -> Self {
        Self {
            config,
            track,
            reach,
            rng,
        }
    }
}

impl Teacher for SimulatedTeacher {
    fn feedback(&mut self, t: u64, env: &SessionEnv, action: &[f64]) -> Result<Option<FeedbackSignal>> {
        let target = env.oracle_action(&self.track, &self.reach);
        Ok(decide_feedback(t, &target, action, &mut self.rng, &self.config))
    }
}

/// Advice pushed by a live console. Signals stamped more than one step
/// behind the current step are discarded.
pub struct HumanTeacher {
    queue: Arc<FeedbackQueue>,
    stale: u64,
}

impl HumanTeacher {
    pub fn new(queue: Arc<FeedbackQueue>) -> Self {
        Self { queue, stale: 0 }
    }

    pub fn queue(&self) -> &Arc<FeedbackQueue> {
        &self.queue
    }

    /// Signals discarded for staleness.
    pub fn stale(&self) -> u64 {
        self.stale
    }
}

/// Whether advice stamped `stamped` may still be applied at step `current`.
pub fn is_fresh(stamped: u64, current: u64) -> bool {
    stamped + 1 >= current
}

impl Teacher for HumanTeacher {
    fn feedback(&mut self, t: u64, _env: &SessionEnv, _action: &[f64]) -> Result<Option<FeedbackSignal>> {
        match self.queue.take() {
            Some(signal) if is_fresh(signal.timestep, t) => Ok(Some(FeedbackSignal { h: signal.h, timestep: t })),
            Some(_) => {
                self.stale += 1;
                Ok(None)
            }
            None => Ok(None),
        }
    }
}

/// Re-issues logged advice at its recorded steps and checks that every
/// label comes out identical.
pub struct ReplayTeacher {
    pending: VecDeque<FeedbackLogEntry>,
    expected: VecDeque<FeedbackLogEntry>,
}

impl ReplayTeacher {
    pub fn new(entries: Vec<FeedbackLogEntry>) -> Self {
        Self {
            pending: entries.iter().cloned().collect(),
            expected: entries.into(),
        }
    }

    /// Entries not yet replayed.
    pub fn remaining(&self) -> usize {
        self.pending.len()
    }
}

impl Teacher for ReplayTeacher {
    fn feedback(&mut self, t: u64, _env: &SessionEnv, _action: &[f64]) -> Result<Option<FeedbackSignal>> {
        match self.pending.front() {
            Some(e) if e.timestep == t => {
                let e = self.pending.pop_front().unwrap();
                Ok(Some(FeedbackSignal::new(e.h, t)?))
            }
            Some(e) if e.timestep < t => Err(Error::Contract(format!("replay skipped logged step {}", e.timestep))),
            _ => Ok(None),
        }
    }

    fn applied(&mut self, t: u64, h: &[i8], y_label: Option<&[f64]>) -> Result<()> {
        let want = self
            .expected
            .pop_front()
            .ok_or_else(|| Error::Contract(format!("replay applied unlogged advice at step {t}")))?;
        if want.timestep != t || want.h != h || want.y_label.as_deref() != y_label {
            return Err(Error::Contract(format!(
                "replay diverged at step {t}: logged {want:?}, got h {h:?} label {y_label:?}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn staleness_rule() {
        assert!(is_fresh(10, 10));
        assert!(is_fresh(10, 11));
        assert!(!is_fresh(10, 12));
        assert!(is_fresh(12, 10));
    }
}
