//! D-COACH: corrective advice trains a convolutional policy online, with a
//! replay buffer of corrections and an autoencoder that shapes the shared
//! encoder until its reconstruction error drops below a threshold.

mod basic;
mod buffer;
mod network;
mod queue;

pub use basic::{calibrate_epsilon, pretrain_autoencoder, record_demonstrations, PretrainReport};
pub use buffer::{BufferConfig, CorrectionRecord, ReplayBuffer};
pub use network::{Architecture, JointNetwork, DECODER_SECTION, ENCODER_SECTION, POLICY_HEAD_SECTION};
pub use queue::FeedbackQueue;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ActionBounds, Observation};
use crate::error::{Error, Result};
use crate::teachers::FeedbackSignal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Policy and autoencoder learned together from scratch.
    Enhanced,
    /// Autoencoder pretrained on demonstrations, encoder frozen for good.
    Basic,
}

/// Ablation variants of the enhanced mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Policy and reconstruction costs with threshold-gated encoder freezing.
    A,
    /// Policy and reconstruction costs, encoder never frozen.
    B,
    /// Policy cost only; no decoder.
    C,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::A => "A",
            Variant::B => "B",
            Variant::C => "C",
        }
    }

    pub fn uses_decoder(self) -> bool {
        self != Variant::C
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Variant::A),
            "B" | "b" => Ok(Variant::B),
            "C" | "c" => Ok(Variant::C),
            other => Err(Error::InvalidConfig(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DCoachConfig {
    /// Correction magnitude per action dimension.
    pub e: Vec<f64>,
    /// Reconstruction-error threshold above which the encoder is retrained.
    pub epsilon: f64,
    pub policy_lr: f64,
    pub ae_lr: f64,
    pub mode: Mode,
    pub variant: Variant,
    pub buffer: BufferConfig,
}

impl DCoachConfig {
    pub fn validate(&self, action_dims: usize) -> Result<()> {
        if self.e.len() != action_dims {
            return Err(Error::InvalidConfig(format!(
                "e has {} entries for a {action_dims}-d action",
                self.e.len()
            )));
        }
        if self.e.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::InvalidConfig("e must be positive".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidConfig("epsilon must be >= 0".into()));
        }
        if !(self.policy_lr > 0.0) || !(self.ae_lr > 0.0) {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        self.buffer.validate()
    }

    /// Threshold actually applied: variant B never freezes.
    pub fn effective_epsilon(&self) -> f64 {
        match self.variant {
            Variant::B => 0.0,
            _ => self.epsilon,
        }
    }

    /// Whether batch updates may train the autoencoder at all.
    pub fn trains_autoencoder(&self) -> bool {
        self.mode == Mode::Enhanced && self.variant.uses_decoder()
    }
}

/// `error_i = h_i * e_i`.
pub fn compute_error(h: &[i8], e: &[f64]) -> Vec<f64> {
    h.iter().zip(e).map(|(&hi, &ei)| hi as f64 * ei).collect()
}

/// `clip(a + error)` to the action bounds.
pub fn make_label(action: &[f64], error: &[f64], bounds: &ActionBounds) -> Vec<f64> {
    let raw: Vec<f64> = action.iter().zip(error).map(|(a, e)| a + e).collect();
    bounds.clip(&raw)
}

/// One policy SGD step on the single pair. Returns the loss before the step.
pub fn immediate_update(
    net: &mut JointNetwork,
    state: &Observation,
    y_label: &[f64],
    config: &DCoachConfig,
) -> Result<f64> {
    net.policy_step(&[(state, y_label)], config.policy_lr)
}

/// What a batch update did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchOutcome {
    /// Buffer below its minimum size; nothing changed.
    Skipped,
    Ran {
        policy_loss: f64,
        /// Reconstruction error on the sampled batch, when a decoder is trained.
        ae_error: Option<f64>,
        /// Whether the encoder was unfrozen and the autoencoder stepped.
        ae_updated: bool,
    },
}

impl BatchOutcome {
    pub fn ran(&self) -> bool {
        matches!(self, BatchOutcome::Ran { .. })
    }
}

/// Policy step on `N` records sampled with replacement; then, if the
/// reconstruction error on that same sample exceeds the threshold, unfreeze
/// the encoder and take one autoencoder step, otherwise freeze it.
pub fn batch_update<R: Rng + ?Sized>(
    net: &mut JointNetwork,
    buffer: &ReplayBuffer,
    config: &DCoachConfig,
    rng: &mut R,
) -> Result<BatchOutcome> {
    if !buffer.is_ready() {
        return Ok(BatchOutcome::Skipped);
    }
    let picks = buffer.sample_indices(rng);
    let records: Vec<&CorrectionRecord> = picks.iter().map(|&i| buffer.get(i).expect("sampled in range")).collect();
    let pairs: Vec<(&Observation, &[f64])> = records.iter().map(|r| (&r.state, r.y_label.as_slice())).collect();
    let policy_loss = net.policy_step(&pairs, config.policy_lr)?;
    if !config.trains_autoencoder() {
        return Ok(BatchOutcome::Ran {
            policy_loss,
            ae_error: None,
            ae_updated: false,
        });
    }
    let images: Vec<&Observation> = records.iter().map(|r| &r.state).collect();
    let (ae_error, ae_updated) =
        net.gated_autoencoder_step(&images, config.ae_lr, Some(config.effective_epsilon()))?;
    Ok(BatchOutcome::Ran {
        policy_loss,
        ae_error: Some(ae_error),
        ae_updated,
    })
}

/// Per-step record of which branches of the learning loop fired.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Label built from nonzero advice this step.
    pub y_label: Option<Vec<f64>>,
    pub immediate_loss: Option<f64>,
    /// Batch update triggered by the correction.
    pub feedback_batch: Option<BatchOutcome>,
    /// Batch update triggered by the periodic interval.
    pub interval_batch: Option<BatchOutcome>,
}

/// Network, buffer and sampling RNG of one learner.
#[derive(Debug, Clone)]
pub struct DCoachAgent {
    pub net: JointNetwork,
    pub buffer: ReplayBuffer,
    pub config: DCoachConfig,
    rng: ChaCha8Rng,
}

impl DCoachAgent {
    pub fn new(net: JointNetwork, config: DCoachConfig, seed: u64) -> Result<Self> {
        config.validate(net.bounds().dims())?;
        if config.variant.uses_decoder() != net.has_decoder() && config.mode == Mode::Enhanced {
            return Err(Error::InvalidConfig(format!(
                "variant {} expects decoder = {}",
                config.variant.as_str(),
                config.variant.uses_decoder()
            )));
        }
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer)?,
            net,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn act(&self, obs: &Observation) -> Result<Vec<f64>> {
        self.net.act(obs)
    }

    /// One pass of the learning loop at global timestep `t`, after `action`
    /// was executed from `obs`.
    pub fn step(
        &mut self,
        obs: &Observation,
        action: &[f64],
        feedback: Option<&FeedbackSignal>,
        t: u64,
    ) -> Result<StepReport> {
        dcoach_step(
            &mut self.net,
            &mut self.buffer,
            obs,
            action,
            feedback,
            t,
            &self.config,
            &mut self.rng,
        )
    }
}

/// Nonzero advice: error, label, immediate update, batch update, then append
/// the record. Independently, every `update_interval` steps: batch update.
#[allow(clippy::too_many_arguments)]
pub fn dcoach_step<R: Rng + ?Sized>(
    net: &mut JointNetwork,
    buffer: &mut ReplayBuffer,
    obs: &Observation,
    action: &[f64],
    feedback: Option<&FeedbackSignal>,
    t: u64,
    config: &DCoachConfig,
    rng: &mut R,
) -> Result<StepReport> {
    let mut report = StepReport {
        y_label: None,
        immediate_loss: None,
        feedback_batch: None,
        interval_batch: None,
    };
    if let Some(fb) = feedback.filter(|f| !f.is_zero()) {
        if fb.h.len() != action.len() {
            return Err(Error::ShapeMismatch {
                context: "feedback vector".into(),
                expected: vec![action.len()],
                found: vec![fb.h.len()],
            });
        }
        let error = compute_error(&fb.h, &config.e);
        let y_label = make_label(action, &error, net.bounds());
        report.immediate_loss = Some(immediate_update(net, obs, &y_label, config)?);
        report.feedback_batch = Some(batch_update(net, buffer, config, rng)?);
        buffer.append_trim(CorrectionRecord {
            state: obs.clone(),
            y_label: y_label.clone(),
        });
        report.y_label = Some(y_label);
    }
    if t.is_multiple_of(config.buffer.update_interval) {
        report.interval_batch = Some(batch_update(net, buffer, config, rng)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_examples() {
        assert_eq!(compute_error(&[0, 0], &[0.3, 0.3]), vec![0.0, 0.0]);
        assert_eq!(compute_error(&[1, 0, -1], &[0.2; 3]), vec![0.2, 0.0, -0.2]);
        assert_eq!(compute_error(&[1, -1], &[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn label_examples() {
        let b = ActionBounds::symmetric(1, 1.0);
        assert!((make_label(&[0.5], &[0.2], &b)[0] - 0.7).abs() < 1e-15);
        assert_eq!(make_label(&[0.95], &[0.2], &b), vec![1.0]);
        assert_eq!(make_label(&[-0.3], &[0.0], &b), vec![-0.3]);
    }

    #[test]
    fn variant_parsing_and_epsilon() {
        assert_eq!("B".parse::<Variant>().unwrap(), Variant::B);
        assert!("D".parse::<Variant>().is_err());
        let cfg = DCoachConfig {
            e: vec![0.2],
            epsilon: 0.01,
            policy_lr: 0.1,
            ae_lr: 0.1,
            mode: Mode::Enhanced,
            variant: Variant::B,
            buffer: BufferConfig::default(),
        };
        assert_eq!(cfg.effective_epsilon(), 0.0);
        assert!(cfg.validate(1).is_ok());
        assert!(cfg.validate(2).is_err());
    }
}
