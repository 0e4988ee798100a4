use std::hash::{DefaultHasher, Hash, Hasher};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::{
    activation_forward, conv_backward, conv_forward, dense_backward, dense_forward, glorot_limit,
    ConvGeom, LayerSpec,
};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A validated stack of layers with a fixed input shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetworkSpec", into = "RawNetworkSpec")]
pub struct NetworkSpec {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    /// `shapes[i]` is the input shape of layer `i`; the last entry is the output shape.
    shapes: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct RawNetworkSpec {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
}

impl TryFrom<RawNetworkSpec> for NetworkSpec {
    type Error = Error;
    fn try_from(raw: RawNetworkSpec) -> Result<Self> {
        NetworkSpec::new(raw.input_shape, raw.layers)
    }
}

impl From<NetworkSpec> for RawNetworkSpec {
    fn from(spec: NetworkSpec) -> Self {
        RawNetworkSpec {
            input_shape: spec.input_shape,
            layers: spec.layers,
        }
    }
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "network input shape must be non-empty and positive, got {input_shape:?}"
            )));
        }
        let mut shapes = vec![input_shape.clone()];
        for (i, layer) in layers.iter().enumerate() {
            let next = layer.output_shape(shapes.last().unwrap()).map_err(|why| {
                Error::InvalidConfig(format!("layer {i} ({}): {why}", layer.kind_name()))
            })?;
            shapes.push(next);
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Input shape of layer `i` (or the network output for `i == layers.len()`).
    pub fn shape_at(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn forward(&self, params: &NetworkParams, input: &Tensor) -> Result<Tensor> {
        self.check_params(params)?;
        self.check_input(input)?;
        let mut x = input.clone();
        for i in 0..self.layers.len() {
            x = self.layer_forward(i, params, &x);
        }
        check_finite(&x, "network output")?;
        Ok(x)
    }

    /// Forward pass that keeps every intermediate activation for `backward_trace`.
    pub fn forward_trace(&self, params: &NetworkParams, input: &Tensor) -> Result<Trace> {
        self.check_params(params)?;
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.clone());
        for i in 0..self.layers.len() {
            let next = self.layer_forward(i, params, &activations[i]);
            activations.push(next);
        }
        check_finite(activations.last().unwrap(), "network output")?;
        Ok(Trace { activations })
    }

    /// Gradients of a scalar loss with respect to every parameter and the input,
    /// given `upstream = dL/d(output)`.
    pub fn backward(
        &self,
        params: &NetworkParams,
        input: &Tensor,
        upstream: &Tensor,
    ) -> Result<Gradients> {
        let trace = self.forward_trace(params, input)?;
        let mut grads = Gradients::zeros_like(self, params);
        self.backward_trace(params, &trace, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates parameter gradients into `grads` and overwrites `grads.input`.
    pub fn backward_trace(
        &self,
        params: &NetworkParams,
        trace: &Trace,
        upstream: &Tensor,
        grads: &mut Gradients,
    ) -> Result<()> {
        if upstream.shape() != self.output_shape() {
            return Err(Error::ShapeMismatch {
                context: "backward upstream gradient".into(),
                expected: self.output_shape().to_vec(),
                found: upstream.shape().to_vec(),
            });
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Contract("gradient buffer built for another network".into()));
        }
        let mut g = upstream.clone();
        for i in (0..self.layers.len()).rev() {
            let x = &trace.activations[i];
            let y = &trace.activations[i + 1];
            let mut dx = Tensor::zeros(&self.shapes[i]);
            match &self.layers[i] {
                LayerSpec::Activation { function } => {
                    for ((d, (&xi, &yi)), &gi) in dx
                        .data_mut()
                        .iter_mut()
                        .zip(x.data().iter().zip(y.data()))
                        .zip(g.data())
                    {
                        *d = gi * function.derivative(xi, yi);
                    }
                }
                LayerSpec::Flatten => {
                    dx.data_mut().copy_from_slice(g.data());
                }
                LayerSpec::Dense { inputs, outputs } => {
                    let p = params.layers[i].as_ref().unwrap();
                    let slot = grads.layers[i].as_mut().unwrap();
                    let targets = p
                        .trainable
                        .then(|| (slot.weight.data_mut(), slot.bias.data_mut()));
                    dense_backward(
                        *inputs,
                        *outputs,
                        x.data(),
                        p.weight.data(),
                        g.data(),
                        dx.data_mut(),
                        targets,
                    );
                }
                spec @ (LayerSpec::Conv2d { .. } | LayerSpec::UpsampleConv2d { .. }) => {
                    let geom = ConvGeom::from_spec(spec, &self.shapes[i], &self.shapes[i + 1]);
                    let p = params.layers[i].as_ref().unwrap();
                    let slot = grads.layers[i].as_mut().unwrap();
                    let targets = p
                        .trainable
                        .then(|| (slot.weight.data_mut(), slot.bias.data_mut()));
                    conv_backward(&geom, x.data(), p.weight.data(), g.data(), dx.data_mut(), targets);
                }
            }
            g = dx;
        }
        grads.input = g;
        Ok(())
    }

    fn layer_forward(&self, i: usize, params: &NetworkParams, x: &Tensor) -> Tensor {
        let out_shape = &self.shapes[i + 1];
        match &self.layers[i] {
            LayerSpec::Activation { function } => activation_forward(*function, x),
            LayerSpec::Flatten => Tensor::from_vec(x.data().to_vec()),
            LayerSpec::Dense { inputs, outputs } => {
                let p = params.layers[i].as_ref().unwrap();
                let mut out = Tensor::zeros(out_shape);
                dense_forward(
                    *inputs,
                    *outputs,
                    x.data(),
                    p.weight.data(),
                    p.bias.data(),
                    out.data_mut(),
                );
                out
            }
            spec @ (LayerSpec::Conv2d { .. } | LayerSpec::UpsampleConv2d { .. }) => {
                let geom = ConvGeom::from_spec(spec, &self.shapes[i], out_shape);
                let p = params.layers[i].as_ref().unwrap();
                let mut out = Tensor::zeros(out_shape);
                conv_forward(&geom, x.data(), p.weight.data(), p.bias.data(), out.data_mut());
                out
            }
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.input_shape.as_slice() {
            let context = match self.layers.first() {
                Some(l) => format!("input to layer 0 ({})", l.kind_name()),
                None => "network input".to_string(),
            };
            return Err(Error::ShapeMismatch {
                context,
                expected: self.input_shape.clone(),
                found: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Checks that `params` has one well-shaped record per parametric layer.
    pub fn check_params(&self, params: &NetworkParams) -> Result<()> {
        if params.layers.len() != self.layers.len() {
            return Err(Error::Contract(format!(
                "network has {} layers but parameters cover {}",
                self.layers.len(),
                params.layers.len()
            )));
        }
        for (i, (layer, p)) in self.layers.iter().zip(&params.layers).enumerate() {
            match (layer.param_shapes(), p) {
                (None, None) => {}
                (Some((w, b, _, _)), Some(p)) => {
                    if p.weight.shape() != w.as_slice() || p.bias.shape() != b.as_slice() {
                        return Err(Error::ShapeMismatch {
                            context: format!("parameters of layer {i} ({})", layer.kind_name()),
                            expected: w,
                            found: p.weight.shape().to_vec(),
                        });
                    }
                }
                _ => {
                    return Err(Error::Contract(format!(
                        "parameter slot of layer {i} ({}) does not match its kind",
                        layer.kind_name()
                    )))
                }
            }
        }
        Ok(())
    }
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    match t.first_non_finite() {
        None => Ok(()),
        Some(idx) => Err(Error::NonFinite {
            location: format!("{what}[{idx}]"),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub trainable: bool,
}

/// Parameters for every layer of a `NetworkSpec`; `None` for parameter-free layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub layers: Vec<Option<LayerParams>>,
}

impl NetworkParams {
    /// Glorot-uniform weights, zero biases, every layer trainable.
    pub fn init<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Self {
        let layers = spec
            .layers()
            .iter()
            .map(|l| {
                l.param_shapes().map(|(w, b, fan_in, fan_out)| {
                    let limit = glorot_limit(fan_in, fan_out);
                    let n: usize = w.iter().product();
                    let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
                    LayerParams {
                        weight: Tensor::new(w, data).expect("shape from spec"),
                        bias: Tensor::zeros(&b),
                        trainable: true,
                    }
                })
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        let layers = spec
            .layers()
            .iter()
            .map(|l| {
                l.param_shapes().map(|(w, b, _, _)| LayerParams {
                    weight: Tensor::zeros(&w),
                    bias: Tensor::zeros(&b),
                    trainable: true,
                })
            })
            .collect();
        Self { layers }
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for p in self.layers.iter_mut().flatten() {
            p.trainable = trainable;
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.layers.iter().flatten().any(|p| p.trainable)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flatten()
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .all(|p| p.weight.is_finite() && p.bias.is_finite())
    }

    /// Hash over the exact bit patterns of every parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (i, p) in self.layers.iter().enumerate() {
            if let Some(p) = p {
                i.hash(&mut h);
                for v in p.weight.data().iter().chain(p.bias.data()) {
                    v.to_bits().hash(&mut h);
                }
            }
        }
        h.finish()
    }
}

/// Intermediate activations of one forward pass; `activations[0]` is the input.
#[derive(Debug, Clone)]
pub struct Trace {
    pub activations: Vec<Tensor>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.activations.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<LayerGrad>>,
    pub input: Tensor,
}

impl Gradients {
    pub fn zeros_like(spec: &NetworkSpec, params: &NetworkParams) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|p| {
                p.as_ref().map(|p| LayerGrad {
                    weight: Tensor::zeros(p.weight.shape()),
                    bias: Tensor::zeros(p.bias.shape()),
                })
            })
            .collect();
        Self {
            layers,
            input: Tensor::zeros(spec.input_shape()),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.layers.iter_mut().flatten() {
            g.weight.scale(factor);
            g.bias.scale(factor);
        }
        self.input.scale(factor);
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .all(|g| g.weight.max_abs() == 0.0 && g.bias.max_abs() == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .all(|g| g.weight.is_finite() && g.bias.is_finite())
    }
}
