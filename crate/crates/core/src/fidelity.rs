//! Randomised finite-difference checks over every layer kind and over the
//! full policy and autoencoder networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dcoach::Architecture;
use crate::nn::{
    grad_check_with, Activation, GradCheckOptions, LayerSpec, MeanSquaredError, NetworkParams, NetworkSpec, Padding,
    Tensor,
};

/// Finite-difference step used by the suite.
pub const FD_STEP: f64 = 1e-5;

/// Everything the suite checks, in report order.
pub const SUBJECTS: [Subject; 10] = [
    Subject::Conv2d,
    Subject::UpsampleConv2d,
    Subject::Dense,
    Subject::Activation(Activation::Relu),
    Subject::Activation(Activation::Tanh),
    Subject::Activation(Activation::Sigmoid),
    Subject::Activation(Activation::Linear),
    Subject::Flatten,
    Subject::PolicyNetwork,
    Subject::AutoencoderNetwork,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subject {
    Conv2d,
    UpsampleConv2d,
    Dense,
    Activation(Activation),
    Flatten,
    PolicyNetwork,
    AutoencoderNetwork,
}

impl Subject {
    pub fn name(self) -> &'static str {
        match self {
            Subject::Conv2d => "conv2d",
            Subject::UpsampleConv2d => "upsample-conv2d",
            Subject::Dense => "dense",
            Subject::Activation(Activation::Relu) => "activation/relu",
            Subject::Activation(Activation::Tanh) => "activation/tanh",
            Subject::Activation(Activation::Sigmoid) => "activation/sigmoid",
            Subject::Activation(Activation::Linear) => "activation/linear",
            Subject::Flatten => "flatten",
            Subject::PolicyNetwork => "policy network",
            Subject::AutoencoderNetwork => "autoencoder network",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectResult {
    pub subject: &'static str,
    /// Trials that were compared (kink-free).
    pub trials: usize,
    /// Trials discarded because a perturbation crossed a ReLU kink.
    pub skipped_kinks: usize,
    pub failures: usize,
    pub max_rel_error: f64,
}

impl SubjectResult {
    pub fn passed(&self, wanted_trials: usize) -> bool {
        self.failures == 0 && self.trials >= wanted_trials
    }
}

/// Runs `trials` kink-free trials per subject (giving up after ten times as
/// many attempts).
pub fn gradient_suite(trials: usize, seed: u64, tolerance: f64) -> Vec<SubjectResult> {
    SUBJECTS
        .iter()
        .enumerate()
        .map(|(i, &s)| check_subject(s, trials, seed.wrapping_add(i as u64 * 7919), tolerance))
        .collect()
}

pub fn check_subject(subject: Subject, trials: usize, seed: u64, tolerance: f64) -> SubjectResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut result = SubjectResult {
        subject: subject.name(),
        trials: 0,
        skipped_kinks: 0,
        failures: 0,
        max_rel_error: 0.0,
    };
    let mut attempts = 0;
    while result.trials < trials && attempts < trials * 10 {
        attempts += 1;
        let (spec, input, target, per_layer) = random_case(subject, &mut rng);
        let mut params = NetworkParams::init(&spec, &mut rng);
        for layer in params.layers.iter_mut().flatten() {
            layer.bias.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
        }
        let opts = GradCheckOptions {
            step: FD_STEP,
            tolerance,
            max_per_layer: per_layer,
            check_input: true,
            seed: rng.gen(),
        };
        let report = grad_check_with(&spec, &params, &input, &MeanSquaredError::new(target), &opts);
        if !report.kinks.is_empty() {
            result.skipped_kinks += 1;
            continue;
        }
        result.trials += 1;
        result.max_rel_error = result.max_rel_error.max(report.max_rel_error());
        if !report.passed {
            result.failures += 1;
        }
    }
    result
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("sized")
}

/// Network, input, regression target and per-layer sampling limit.
fn random_case(subject: Subject, rng: &mut ChaCha8Rng) -> (NetworkSpec, Tensor, Tensor, Option<usize>) {
    let padding = |rng: &mut ChaCha8Rng| if rng.gen() { Padding::Same } else { Padding::Valid };
    let (input_shape, layers, per_layer) = match subject {
        Subject::Conv2d => {
            let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let kernel = [1, 3][rng.gen_range(0..2)];
            let side = rng.gen_range(kernel.max(3)..=7);
            let layer = LayerSpec::Conv2d {
                in_channels: cin,
                out_channels: cout,
                kernel,
                stride: rng.gen_range(1..=2),
                padding: padding(rng),
            };
            (vec![cin, side, side], vec![layer], None)
        }
        Subject::UpsampleConv2d => {
            let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let kernel: usize = [1, 3][rng.gen_range(0..2)];
            let scale = rng.gen_range(1..=3);
            let side = rng.gen_range(kernel.div_ceil(scale).max(2)..=4);
            let layer = LayerSpec::UpsampleConv2d {
                in_channels: cin,
                out_channels: cout,
                kernel,
                scale,
                padding: padding(rng),
            };
            (vec![cin, side, side], vec![layer], None)
        }
        Subject::Dense => {
            let (i, o) = (rng.gen_range(1..=6), rng.gen_range(1..=5));
            (vec![i], vec![LayerSpec::dense(i, o)], None)
        }
        Subject::Activation(f) => {
            let shape = if rng.gen() {
                vec![rng.gen_range(1..=8)]
            } else {
                vec![rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3)]
            };
            (shape, vec![LayerSpec::act(f)], None)
        }
        Subject::Flatten => {
            let shape = vec![rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3)];
            (shape, vec![LayerSpec::Flatten], None)
        }
        Subject::PolicyNetwork | Subject::AutoencoderNetwork => {
            let arch = Architecture::standard(16, 2).expect("16 is a valid size");
            let mut layers = arch.encoder;
            layers.extend(if subject == Subject::PolicyNetwork {
                arch.policy_head
            } else {
                arch.decoder
            });
            (vec![1, 16, 16], layers, Some(6))
        }
    };
    let spec = NetworkSpec::new(input_shape.clone(), layers).expect("valid random case");
    let input = match subject {
        Subject::PolicyNetwork | Subject::AutoencoderNetwork => uniform(rng, &input_shape, 0.0, 1.0),
        _ => uniform(rng, &input_shape, -1.0, 1.0),
    };
    let target = match subject {
        Subject::AutoencoderNetwork => input.clone(),
        Subject::Activation(Activation::Sigmoid) => uniform(rng, spec.output_shape(), 0.0, 1.0),
        _ => uniform(rng, spec.output_shape(), -0.9, 0.9),
    };
    (spec, input, target, per_layer)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_subject_passes_a_few_trials() {
        for r in gradient_suite(5, 1, 1e-4) {
            assert!(r.passed(5), "{r:?}");
        }
    }
}
