use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ActionBounds, Observation};
use crate::error::{Error, Result};
use crate::nn::{
    Activation, Checkpoint, Gradients, LayerSpec, NetworkParams, NetworkSpec, Tensor, Trace,
    sgd_update,
};

/// Layer stacks of the three sub-networks. The encoder maps a `[1, H, W]`
/// image to a latent tensor that feeds both the policy head and the decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub encoder: Vec<LayerSpec>,
    pub policy_head: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
}

impl Architecture {
    /// Three stride-2 3x3 convolutions down to an `8 x H/8 x W/8` latent, a
    /// 32-unit hidden layer before a tanh action head, and a mirrored decoder
    /// of nearest-neighbour upsampling convolutions ending in a sigmoid.
    pub fn standard(image_size: usize, action_dims: usize) -> Result<Self> {
        if image_size == 0 || !image_size.is_multiple_of(8) {
            return Err(Error::InvalidConfig(format!(
                "standard architecture needs an image side divisible by 8, got {image_size}"
            )));
        }
        let latent = 8 * (image_size / 8) * (image_size / 8);
        let relu = || LayerSpec::act(Activation::Relu);
        Ok(Self {
            encoder: vec![
                LayerSpec::conv(1, 4, 3, 2),
                relu(),
                LayerSpec::conv(4, 8, 3, 2),
                relu(),
                LayerSpec::conv(8, 8, 3, 2),
                relu(),
            ],
            policy_head: vec![
                LayerSpec::Flatten,
                LayerSpec::dense(latent, 32),
                relu(),
                LayerSpec::dense(32, action_dims),
                LayerSpec::act(Activation::Tanh),
            ],
            decoder: vec![
                LayerSpec::upconv(8, 8, 3, 2),
                relu(),
                LayerSpec::upconv(8, 4, 3, 2),
                relu(),
                LayerSpec::upconv(4, 1, 3, 2),
                LayerSpec::act(Activation::Sigmoid),
            ],
        })
    }
}

/// Shared encoder with a policy head and an optional reconstruction decoder.
/// The policy head ends in `[-1, 1]` units that are mapped affinely onto the
/// action bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct JointNetwork {
    encoder_spec: NetworkSpec,
    head_spec: NetworkSpec,
    decoder_spec: Option<NetworkSpec>,
    pub encoder: NetworkParams,
    pub head: NetworkParams,
    pub decoder: Option<NetworkParams>,
    bounds: ActionBounds,
    frozen: bool,
}

pub const ENCODER_SECTION: &str = "encoder";
pub const POLICY_HEAD_SECTION: &str = "policy_head";
pub const DECODER_SECTION: &str = "decoder";

impl JointNetwork {
    pub fn new<R: Rng + ?Sized>(
        architecture: &Architecture,
        image_shape: (usize, usize),
        bounds: ActionBounds,
        with_decoder: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let encoder_spec =
            NetworkSpec::new(vec![1, image_shape.0, image_shape.1], architecture.encoder.clone())?;
        let latent = encoder_spec.output_shape().to_vec();
        let head_spec = NetworkSpec::new(latent.clone(), architecture.policy_head.clone())?;
        if head_spec.output_shape() != [bounds.dims()] {
            return Err(Error::InvalidConfig(format!(
                "policy head outputs {:?} for a {}-d action",
                head_spec.output_shape(),
                bounds.dims()
            )));
        }
        let decoder_spec = if with_decoder {
            let spec = NetworkSpec::new(latent, architecture.decoder.clone())?;
            if spec.output_shape() != encoder_spec.input_shape() {
                return Err(Error::InvalidConfig(format!(
                    "decoder reconstructs {:?} but images are {:?}",
                    spec.output_shape(),
                    encoder_spec.input_shape()
                )));
            }
            Some(spec)
        } else {
            None
        };
        let encoder = NetworkParams::init(&encoder_spec, rng);
        let head = NetworkParams::init(&head_spec, rng);
        let decoder = decoder_spec.as_ref().map(|s| NetworkParams::init(s, rng));
        Ok(Self {
            encoder_spec,
            head_spec,
            decoder_spec,
            encoder,
            head,
            decoder,
            bounds,
            frozen: false,
        })
    }

    pub fn bounds(&self) -> &ActionBounds {
        &self.bounds
    }

    pub fn has_decoder(&self) -> bool {
        self.decoder.is_some()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Marks the encoder as (not) trainable. While frozen, no update touches it.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
        self.encoder.set_trainable(!frozen);
    }

    pub fn encoder_fingerprint(&self) -> u64 {
        self.encoder.fingerprint()
    }

    pub fn fingerprint(&self) -> u64 {
        let mut parts = vec![self.encoder.fingerprint(), self.head.fingerprint()];
        if let Some(d) = &self.decoder {
            parts.push(d.fingerprint());
        }
        parts.iter().fold(0xcbf2_9ce4_8422_2325u64, |acc, p| {
            (acc ^ p).wrapping_mul(0x0100_0000_01b3)
        })
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite()
            && self.head.is_finite()
            && self.decoder.as_ref().is_none_or(|d| d.is_finite())
    }

    fn check_image(&self, obs: &Observation) -> Result<()> {
        if obs.tensor().shape() != self.encoder_spec.input_shape() {
            return Err(Error::ShapeMismatch {
                context: "observation".into(),
                expected: self.encoder_spec.input_shape().to_vec(),
                found: obs.tensor().shape().to_vec(),
            });
        }
        Ok(())
    }

    fn to_action(&self, unit: &[f64]) -> Vec<f64> {
        self.bounds.from_unit(unit)
    }

    pub fn act(&self, obs: &Observation) -> Result<Vec<f64>> {
        self.check_image(obs)?;
        let latent = self.encoder_spec.forward(&self.encoder, obs.tensor())?;
        let unit = self.head_spec.forward(&self.head, &latent)?;
        Ok(self.to_action(unit.data()))
    }

    /// Decoder output for one image.
    pub fn reconstruct(&self, obs: &Observation) -> Result<Tensor> {
        let (spec, params) = self.decoder_parts()?;
        self.check_image(obs)?;
        let latent = self.encoder_spec.forward(&self.encoder, obs.tensor())?;
        spec.forward(params, &latent)
    }

    fn decoder_parts(&self) -> Result<(&NetworkSpec, &NetworkParams)> {
        match (&self.decoder_spec, &self.decoder) {
            (Some(s), Some(p)) => Ok((s, p)),
            _ => Err(Error::Contract("this network has no decoder".into())),
        }
    }

    /// Mean over the pairs of the per-pair action MSE.
    pub fn policy_loss(&self, batch: &[(&Observation, &[f64])]) -> Result<f64> {
        let mut total = 0.0;
        for (obs, label) in batch {
            let a = self.act(obs)?;
            total += crate::nn::mse(&a, label);
        }
        Ok(total / batch.len().max(1) as f64)
    }

    /// One SGD step on the mean policy MSE over `batch`. The encoder is
    /// updated only when it is not frozen. Returns the loss before the step.
    pub fn policy_step(&mut self, batch: &[(&Observation, &[f64])], learning_rate: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Contract("policy step on an empty batch".into()));
        }
        let train_encoder = !self.frozen;
        let mut head_grads = Gradients::zeros_like(&self.head_spec, &self.head);
        let mut enc_grads = Gradients::zeros_like(&self.encoder_spec, &self.encoder);
        let half = self.bounds.half_ranges();
        let mut loss = 0.0;
        for (obs, label) in batch {
            self.check_image(obs)?;
            if label.len() != half.len() {
                return Err(Error::ShapeMismatch {
                    context: "action label".into(),
                    expected: vec![half.len()],
                    found: vec![label.len()],
                });
            }
            let enc_trace = self.encoder_spec.forward_trace(&self.encoder, obs.tensor())?;
            let head_trace = self.head_spec.forward_trace(&self.head, enc_trace.output())?;
            let action = self.to_action(head_trace.output().data());
            let dims = action.len() as f64;
            let upstream: Vec<f64> = action
                .iter()
                .zip(label.iter())
                .zip(&half)
                .map(|((a, y), h)| 2.0 * (a - y) / dims * h)
                .collect();
            loss += crate::nn::mse(&action, label);
            let upstream = Tensor::new(vec![upstream.len()], upstream)?;
            self.head_spec
                .backward_trace(&self.head, &head_trace, &upstream, &mut head_grads)?;
            if train_encoder {
                let latent_grad = head_grads.input.clone();
                self.encoder_spec
                    .backward_trace(&self.encoder, &enc_trace, &latent_grad, &mut enc_grads)?;
            }
        }
        let n = batch.len() as f64;
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("policy loss is {loss}")));
        }
        head_grads.scale(1.0 / n);
        sgd_update(&mut self.head, &head_grads, learning_rate)?;
        if train_encoder {
            enc_grads.scale(1.0 / n);
            sgd_update(&mut self.encoder, &enc_grads, learning_rate)?;
        }
        self.ensure_finite()?;
        Ok(loss)
    }

    /// Mean over the batch of the per-pixel MSE between image and reconstruction.
    pub fn reconstruction_error(&self, batch: &[&Observation]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Contract("reconstruction error of an empty batch".into()));
        }
        let mut total = 0.0;
        for obs in batch {
            let rec = self.reconstruct(obs)?;
            total += crate::nn::mse(rec.data(), obs.pixels());
        }
        Ok(total / batch.len() as f64)
    }

    /// One SGD step on the mean reconstruction MSE, through decoder and
    /// encoder. A frozen encoder stays unchanged. Returns the error before the
    /// step.
    pub fn autoencoder_step(&mut self, batch: &[&Observation], learning_rate: f64) -> Result<f64> {
        self.gated_autoencoder_step(batch, learning_rate, None).map(|(e, _)| e)
    }

    /// Measures the batch reconstruction error and, if it exceeds
    /// `threshold` (always when `None`), unfreezes the encoder when a
    /// threshold is given and takes one autoencoder step; with a threshold
    /// that is not exceeded the encoder is frozen instead. Returns the error
    /// and whether a step was taken.
    pub fn gated_autoencoder_step(
        &mut self,
        batch: &[&Observation],
        learning_rate: f64,
        threshold: Option<f64>,
    ) -> Result<(f64, bool)> {
        if batch.is_empty() {
            return Err(Error::Contract("autoencoder step on an empty batch".into()));
        }
        let (dec_spec, dec_params) = self.decoder_parts()?;
        let mut passes = Vec::with_capacity(batch.len());
        let mut loss = 0.0;
        for obs in batch {
            self.check_image(obs)?;
            let enc_trace: Trace = self.encoder_spec.forward_trace(&self.encoder, obs.tensor())?;
            let dec_trace = dec_spec.forward_trace(dec_params, enc_trace.output())?;
            loss += crate::nn::mse(dec_trace.output().data(), obs.pixels());
            passes.push((enc_trace, dec_trace));
        }
        let n = batch.len() as f64;
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("reconstruction loss is {loss}")));
        }
        match threshold {
            Some(eps) if loss > eps => self.set_frozen(false),
            Some(_) => {
                self.set_frozen(true);
                return Ok((loss, false));
            }
            None => {}
        }
        let (dec_spec, dec_params) = self.decoder_parts()?;
        let mut dec_grads = Gradients::zeros_like(dec_spec, dec_params);
        let mut enc_grads = Gradients::zeros_like(&self.encoder_spec, &self.encoder);
        for (obs, (enc_trace, dec_trace)) in batch.iter().zip(&passes) {
            let rec = dec_trace.output();
            let n_px = rec.len() as f64;
            let upstream: Vec<f64> = rec
                .data()
                .iter()
                .zip(obs.pixels())
                .map(|(r, x)| 2.0 * (r - x) / n_px)
                .collect();
            let upstream = Tensor::new(rec.shape().to_vec(), upstream)?;
            dec_spec.backward_trace(dec_params, dec_trace, &upstream, &mut dec_grads)?;
            if !self.frozen {
                let latent_grad = dec_grads.input.clone();
                self.encoder_spec
                    .backward_trace(&self.encoder, enc_trace, &latent_grad, &mut enc_grads)?;
            }
        }
        dec_grads.scale(1.0 / n);
        let decoder = self.decoder.as_mut().expect("checked above");
        sgd_update(decoder, &dec_grads, learning_rate)?;
        if !self.frozen {
            enc_grads.scale(1.0 / n);
            sgd_update(&mut self.encoder, &enc_grads, learning_rate)?;
        }
        self.ensure_finite()?;
        Ok((loss, true))
    }

    fn ensure_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Diverged("network parameters became non-finite".into()))
        }
    }

    pub fn encoder_spec(&self) -> &NetworkSpec {
        &self.encoder_spec
    }

    pub fn head_spec(&self) -> &NetworkSpec {
        &self.head_spec
    }

    pub fn decoder_spec(&self) -> Option<&NetworkSpec> {
        self.decoder_spec.as_ref()
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new();
        ckpt.push(ENCODER_SECTION, &self.encoder_spec, &self.encoder)?;
        ckpt.push(POLICY_HEAD_SECTION, &self.head_spec, &self.head)?;
        if let (Some(spec), Some(params)) = (&self.decoder_spec, &self.decoder) {
            ckpt.push(DECODER_SECTION, spec, params)?;
        }
        Ok(ckpt)
    }

    /// Loads parameters from a checkpoint written for the same architecture.
    /// The frozen flag follows the stored encoder's trainable bits.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let encoder = ckpt.params_for(ENCODER_SECTION, &self.encoder_spec)?;
        let head = ckpt.params_for(POLICY_HEAD_SECTION, &self.head_spec)?;
        let decoder = match &self.decoder_spec {
            Some(spec) if ckpt.has_section(DECODER_SECTION) => Some(ckpt.params_for(DECODER_SECTION, spec)?),
            Some(_) => {
                return Err(Error::Checkpoint("checkpoint lacks a decoder section".into()));
            }
            None => None,
        };
        let frozen = !encoder.is_trainable();
        self.encoder = encoder;
        self.head = head;
        self.decoder = decoder;
        self.frozen = frozen;
        Ok(())
    }
}
