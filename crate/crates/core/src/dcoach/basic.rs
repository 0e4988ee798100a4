use rand::seq::SliceRandom;
use rand::Rng;

use super::JointNetwork;
use crate::env::{Environment, Observation};
use crate::error::{Error, Result};
use crate::stats::quantile;

/// Observations gathered while `demonstrator` drives `env`. Episodes are
/// concatenated, re-seeded from `seed` upward, until `steps` frames exist.
pub fn record_demonstrations<E, F>(env: &mut E, mut demonstrator: F, steps: usize, seed: u64) -> Result<Vec<Observation>>
where
    E: Environment,
    F: FnMut(&E) -> Vec<f64>,
{
    if steps == 0 {
        return Err(Error::InvalidConfig("a demonstration session needs at least one step".into()));
    }
    let mut frames = Vec::with_capacity(steps);
    let mut episode = seed;
    let mut obs = env.reset(episode);
    while frames.len() < steps {
        frames.push(obs.clone());
        let action = demonstrator(env);
        let out = env.step(&action)?;
        obs = if out.done {
            episode += 1;
            env.reset(episode)
        } else {
            out.observation
        };
    }
    Ok(frames)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainReport {
    /// Mean reconstruction error over the dataset before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Minibatch SGD on reconstruction error over shuffled `dataset`; the encoder
/// is frozen afterwards regardless of `epochs`.
pub fn pretrain_autoencoder<R: Rng + ?Sized>(
    net: &mut JointNetwork,
    dataset: &[Observation],
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    rng: &mut R,
) -> Result<PretrainReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("autoencoder pretraining needs data".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be >= 1".into()));
    }
    let all: Vec<&Observation> = dataset.iter().collect();
    let initial_loss = net.reconstruction_error(&all)?;
    net.set_frozen(false);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&Observation> = chunk.iter().map(|&i| &dataset[i]).collect();
            net.autoencoder_step(&batch, learning_rate)?;
        }
    }
    net.set_frozen(true);
    let final_loss = if epochs == 0 {
        initial_loss
    } else {
        net.reconstruction_error(&all)?
    };
    if !final_loss.is_finite() {
        return Err(Error::Diverged(format!("pretraining loss is {final_loss}")));
    }
    Ok(PretrainReport {
        initial_loss,
        final_loss,
    })
}

/// Reconstruction-error quantiles (levels in `[0, 1]`) over `observations`,
/// for choosing the freezing threshold.
pub fn calibrate_epsilon(net: &JointNetwork, observations: &[Observation], levels: &[f64]) -> Result<Vec<(f64, f64)>> {
    if observations.is_empty() {
        return Err(Error::InvalidConfig("calibration needs observations".into()));
    }
    let errors = observations
        .iter()
        .map(|o| net.reconstruction_error(&[o]))
        .collect::<Result<Vec<f64>>>()?;
    levels.iter().map(|&q| Ok((q, quantile(&errors, q)?))).collect()
}
