use serde::{Deserialize, Serialize};

use super::network::{Gradients, NetworkParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl SgdConfig {
    pub fn new(learning_rate: f64, batch_size: usize) -> Result<Self> {
        let cfg = Self {
            learning_rate,
            batch_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// `p <- p - lr * g` for every trainable layer; frozen layers are left untouched.
///
/// Takes the learning rate directly so a zero rate (the identity) is expressible;
/// `SgdConfig` itself insists on a positive rate.
pub fn sgd_update(params: &mut NetworkParams, grads: &Gradients, learning_rate: f64) -> Result<()> {
    if params.layers.len() != grads.layers.len() {
        return Err(Error::Contract(format!(
            "gradients cover {} layers, parameters {}",
            grads.layers.len(),
            params.layers.len()
        )));
    }
    for (i, (p, g)) in params.layers.iter().zip(&grads.layers).enumerate() {
        match (p, g) {
            (None, None) => {}
            (Some(p), Some(g))
                if p.weight.shape() == g.weight.shape() && p.bias.shape() == g.bias.shape() => {}
            _ => {
                return Err(Error::Contract(format!(
                    "gradient for layer {i} does not align with its parameters"
                )))
            }
        }
    }
    for (p, g) in params.layers.iter_mut().zip(&grads.layers) {
        if let (Some(p), Some(g)) = (p, g) {
            if !p.trainable {
                continue;
            }
            p.weight.add_scaled(&g.weight, -learning_rate)?;
            p.bias.add_scaled(&g.bias, -learning_rate)?;
        }
    }
    Ok(())
}

pub fn sgd_step(params: &mut NetworkParams, grads: &Gradients, config: &SgdConfig) -> Result<()> {
    sgd_update(params, grads, config.learning_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, NetworkSpec, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_layer() -> (NetworkSpec, NetworkParams) {
        let spec =
            NetworkSpec::new(vec![1], vec![LayerSpec::dense(1, 1), LayerSpec::dense(1, 1)]).unwrap();
        let params = NetworkParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(0));
        (spec, params)
    }

    #[test]
    fn definitional_update() {
        let (spec, mut params) = two_layer();
        params.layers[0].as_mut().unwrap().weight.fill(1.0);
        let mut g = Gradients::zeros_like(&spec, &params);
        g.layers[0].as_mut().unwrap().weight.fill(0.5);
        sgd_step(&mut params, &g, &SgdConfig::new(0.1, 1).unwrap()).unwrap();
        assert_eq!(params.layers[0].as_ref().unwrap().weight.data(), &[0.95]);
    }

    #[test]
    fn zero_gradient_and_zero_rate_are_identity() {
        let (spec, mut params) = two_layer();
        let before = params.clone();
        let zero = Gradients::zeros_like(&spec, &params);
        sgd_step(&mut params, &zero, &SgdConfig::new(3.0, 1).unwrap()).unwrap();
        assert_eq!(params, before);
        let mut g = zero.clone();
        g.layers[1].as_mut().unwrap().bias.fill(2.0);
        sgd_update(&mut params, &g, 0.0).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn frozen_layers_untouched() {
        let (spec, mut params) = two_layer();
        params.layers[0].as_mut().unwrap().trainable = false;
        let before = params.clone();
        let mut g = Gradients::zeros_like(&spec, &params);
        for l in g.layers.iter_mut().flatten() {
            l.weight.fill(1.0);
            l.bias.fill(1.0);
        }
        sgd_step(&mut params, &g, &SgdConfig::new(0.1, 1).unwrap()).unwrap();
        assert_eq!(params.layers[0], before.layers[0]);
        assert_ne!(params.layers[1], before.layers[1]);
    }

    #[test]
    fn misaligned_gradients_rejected() {
        let (_, mut params) = two_layer();
        let other = NetworkSpec::new(vec![2], vec![LayerSpec::dense(2, 1)]).unwrap();
        let g = Gradients {
            layers: vec![None],
            input: Tensor::zeros(other.input_shape()),
        };
        assert!(sgd_update(&mut params, &g, 0.1).is_err());
    }

    #[test]
    fn rejects_nonpositive_rate() {
        assert!(SgdConfig::new(0.0, 1).is_err());
        assert!(SgdConfig::new(-1.0, 1).is_err());
        assert!(SgdConfig::new(0.1, 0).is_err());
    }
}
