use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative given the pre-activation `x` and the output `y`.
    /// ReLU uses the subgradient 0 at the kink.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// No padding.
    Valid,
    /// Zero padding of `(kernel - 1) / 2` on every side.
    Same,
}

impl Padding {
    pub fn amount(self, kernel: usize) -> usize {
        match self {
            Padding::Valid => 0,
            Padding::Same => (kernel - 1) / 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Activation {
        function: Activation,
    },
    Flatten,
    /// Nearest-neighbour upsampling by `scale` followed by a stride-1 convolution.
    UpsampleConv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        scale: usize,
        padding: Padding,
    },
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: Padding::Same,
        }
    }

    pub fn dense(inputs: usize, outputs: usize) -> Self {
        LayerSpec::Dense { inputs, outputs }
    }

    pub fn act(function: Activation) -> Self {
        LayerSpec::Activation { function }
    }

    pub fn upconv(in_channels: usize, out_channels: usize, kernel: usize, scale: usize) -> Self {
        LayerSpec::UpsampleConv2d {
            in_channels,
            out_channels,
            kernel,
            scale,
            padding: Padding::Same,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Activation { .. } => "activation",
            LayerSpec::Flatten => "flatten",
            LayerSpec::UpsampleConv2d { .. } => "upsample-conv2d",
        }
    }

    /// Stable numeric tag used by the checkpoint format.
    pub fn kind_tag(&self) -> u8 {
        match self {
            LayerSpec::Conv2d { .. } => 1,
            LayerSpec::Dense { .. } => 2,
            LayerSpec::Activation { .. } => 3,
            LayerSpec::Flatten => 4,
            LayerSpec::UpsampleConv2d { .. } => 5,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. } | LayerSpec::UpsampleConv2d { .. }
        )
    }

    /// `(weight shape, bias shape, fan_in, fan_out)` for parametric layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>, usize, usize)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            }
            | LayerSpec::UpsampleConv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
                in_channels * kernel * kernel,
                out_channels * kernel * kernel,
            )),
            LayerSpec::Dense { inputs, outputs } => {
                Some((vec![outputs, inputs], vec![outputs], inputs, outputs))
            }
            _ => None,
        }
    }

    /// Output shape for a given input shape, or a reason the input is rejected.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if kernel == 0 || stride == 0 {
                    return Err("kernel and stride must be >= 1".into());
                }
                let [c, h, w] = expect_chw(input)?;
                if c != in_channels {
                    return Err(format!("expected {in_channels} input channels, got {c}"));
                }
                let p = padding.amount(kernel);
                if h + 2 * p < kernel || w + 2 * p < kernel {
                    return Err(format!("kernel {kernel} larger than padded input {h}x{w}"));
                }
                Ok(vec![
                    out_channels,
                    (h + 2 * p - kernel) / stride + 1,
                    (w + 2 * p - kernel) / stride + 1,
                ])
            }
            LayerSpec::UpsampleConv2d {
                in_channels,
                out_channels,
                kernel,
                scale,
                padding,
            } => {
                if kernel == 0 || scale == 0 {
                    return Err("kernel and scale must be >= 1".into());
                }
                let [c, h, w] = expect_chw(input)?;
                if c != in_channels {
                    return Err(format!("expected {in_channels} input channels, got {c}"));
                }
                let (h, w) = (h * scale, w * scale);
                let p = padding.amount(kernel);
                if h + 2 * p < kernel || w + 2 * p < kernel {
                    return Err(format!("kernel {kernel} larger than padded input {h}x{w}"));
                }
                Ok(vec![out_channels, h + 2 * p - kernel + 1, w + 2 * p - kernel + 1])
            }
            LayerSpec::Dense { inputs, outputs } => {
                if input.len() != 1 || input[0] != inputs {
                    return Err(format!("expected flat input of {inputs}, got {input:?}"));
                }
                if outputs == 0 {
                    return Err("dense layer needs at least one output".into());
                }
                Ok(vec![outputs])
            }
            LayerSpec::Activation { .. } => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

fn expect_chw(input: &[usize]) -> std::result::Result<[usize; 3], String> {
    match *input {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(format!("expected [channels, height, width], got {input:?}")),
    }
}

/// Geometry of a stride/pad convolution over an already-upsampled view.
#[derive(Clone, Copy)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// Source (pre-upsample) spatial dims.
    pub h: usize,
    pub w: usize,
    /// Nearest-neighbour upsample factor applied to the source.
    pub scale: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn from_spec(spec: &LayerSpec, input_shape: &[usize], output_shape: &[usize]) -> Self {
        let (cin, cout, k, stride, scale, padding) = match *spec {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => (in_channels, out_channels, kernel, stride, 1, padding),
            LayerSpec::UpsampleConv2d {
                in_channels,
                out_channels,
                kernel,
                scale,
                padding,
            } => (in_channels, out_channels, kernel, 1, scale, padding),
            _ => unreachable!("not a convolution"),
        };
        Self {
            cin,
            cout,
            k,
            stride,
            pad: padding.amount(k),
            h: input_shape[1],
            w: input_shape[2],
            scale,
            ho: output_shape[1],
            wo: output_shape[2],
        }
    }
}

impl ConvGeom {
    fn patch_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// For one kernel tap along an axis: the output range whose taps land
    /// inside the (upsampled) source, and each such output's source offset.
    fn axis_run(&self, tap: usize, out_len: usize, src_len: usize) -> (usize, Vec<usize>) {
        let up = (src_len * self.scale) as isize;
        let mut first = out_len;
        let mut offsets = Vec::new();
        for o in 0..out_len {
            let u = (o * self.stride + tap) as isize - self.pad as isize;
            if (0..up).contains(&u) {
                first = first.min(o);
                offsets.push(u as usize / self.scale);
            }
        }
        (first, offsets)
    }

    /// Calls `visit(row, first_position, source_indices)` for every run of
    /// in-bounds taps; positions are consecutive from `first_position`.
    fn for_each_run(&self, mut visit: impl FnMut(usize, usize, &[usize])) {
        let ys: Vec<_> = (0..self.k).map(|t| self.axis_run(t, self.ho, self.h)).collect();
        let xs: Vec<_> = (0..self.k).map(|t| self.axis_run(t, self.wo, self.w)).collect();
        let kk = self.k * self.k;
        let mut src = Vec::with_capacity(self.wo);
        for ci in 0..self.cin {
            let plane = ci * self.h * self.w;
            for (ky, (oy0, yoff)) in ys.iter().enumerate() {
                for (kx, (ox0, xoff)) in xs.iter().enumerate() {
                    let r = ci * kk + ky * self.k + kx;
                    for (j, sy) in yoff.iter().enumerate() {
                        let row = plane + sy * self.w;
                        src.clear();
                        src.extend(xoff.iter().map(|sx| row + sx));
                        visit(r, (oy0 + j) * self.wo + ox0, &src);
                    }
                }
            }
        }
    }

    /// Patch matrix `[cin * k * k, ho * wo]`, zero at padding taps.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let p = self.positions();
        let mut cols = vec![0.0; self.patch_rows() * p];
        self.for_each_run(|r, pos, src| {
            let dst = &mut cols[r * p + pos..r * p + pos + src.len()];
            for (d, &i) in dst.iter_mut().zip(src) {
                *d = x[i];
            }
        });
        cols
    }
}

pub(crate) fn conv_forward(g: &ConvGeom, x: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let cols = g.im2col(x);
    let (rows, p) = (g.patch_rows(), g.positions());
    for co in 0..g.cout {
        let o = &mut out[co * p..(co + 1) * p];
        o.fill(bias[co]);
        for r in 0..rows {
            let w = weight[co * rows + r];
            if w == 0.0 {
                continue;
            }
            for (acc, c) in o.iter_mut().zip(&cols[r * p..(r + 1) * p]) {
                *acc += w * c;
            }
        }
    }
}

/// Accumulates input gradients into `dx` and, when `dw`/`db` are given,
/// parameter gradients.
pub(crate) fn conv_backward(
    g: &ConvGeom,
    x: &[f64],
    weight: &[f64],
    upstream: &[f64],
    dx: &mut [f64],
    params: Option<(&mut [f64], &mut [f64])>,
) {
    let (rows, p) = (g.patch_rows(), g.positions());
    if let Some((dw, db)) = params {
        let cols = g.im2col(x);
        for co in 0..g.cout {
            let up = &upstream[co * p..(co + 1) * p];
            db[co] += up.iter().sum::<f64>();
            for r in 0..rows {
                dw[co * rows + r] += dot(up, &cols[r * p..(r + 1) * p]);
            }
        }
    }
    let mut dcols = vec![0.0; rows * p];
    for co in 0..g.cout {
        let up = &upstream[co * p..(co + 1) * p];
        for r in 0..rows {
            let w = weight[co * rows + r];
            if w == 0.0 {
                continue;
            }
            for (d, u) in dcols[r * p..(r + 1) * p].iter_mut().zip(up) {
                *d += w * u;
            }
        }
    }
    g.for_each_run(|r, pos, src| {
        for (&d, &i) in dcols[r * p + pos..].iter().zip(src) {
            dx[i] += d;
        }
    });
}

/// Dot product with four independent accumulators so the loop vectorises.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn dense_forward(inputs: usize, outputs: usize, x: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    for o in 0..outputs {
        let row = &weight[o * inputs..(o + 1) * inputs];
        out[o] = bias[o] + dot(row, x);
    }
}

pub(crate) fn dense_backward(
    inputs: usize,
    outputs: usize,
    x: &[f64],
    weight: &[f64],
    upstream: &[f64],
    dx: &mut [f64],
    mut params: Option<(&mut [f64], &mut [f64])>,
) {
    for o in 0..outputs {
        let gout = upstream[o];
        if gout == 0.0 {
            continue;
        }
        let row = &weight[o * inputs..(o + 1) * inputs];
        for (d, w) in dx.iter_mut().zip(row) {
            *d += gout * w;
        }
        if let Some((dw, db)) = params.as_mut() {
            db[o] += gout;
            for (d, v) in dw[o * inputs..(o + 1) * inputs].iter_mut().zip(x) {
                *d += gout * v;
            }
        }
    }
}

/// Uniform Glorot bound, `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn activation_forward(f: Activation, x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = f.apply(*v));
    y
}
