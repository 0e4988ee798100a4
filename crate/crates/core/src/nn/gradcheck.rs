//! Central finite-difference verification of analytic gradients.
//!
//! Each checked parameter `p` is perturbed to `p ± step`; the numeric
//! derivative `(L(p + step) - L(p - step)) / (2 step)` is compared against
//! the backward pass. ReLU kinks make the numeric derivative meaningless, so
//! every perturbed pass also records which ReLU inputs changed sign. A flip
//! (or a pre-activation sitting exactly at zero) is reported as a kink and the
//! check does not pass.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layer::{Activation, LayerSpec};
use super::loss::Loss;
use super::network::{NetworkParams, NetworkSpec, Trace};
use super::tensor::Tensor;

/// Denominator floor for relative errors so that vanishing gradients do not
/// turn rounding noise into large ratios.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many entries per layer (random subset), all if `None`.
    pub max_per_layer: Option<usize>,
    pub check_input: bool,
    pub seed: u64,
}

impl GradCheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            step: 1e-5,
            tolerance,
            max_per_layer: None,
            check_input: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    /// Layer index, or `None` for the network input.
    pub layer: Option<usize>,
    pub kind: &'static str,
    pub checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KinkSite {
    /// Index of the ReLU activation layer.
    pub layer: usize,
    pub unit: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub layers: Vec<LayerCheck>,
    pub kinks: Vec<KinkSite>,
    pub non_finite: Option<String>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.layers.iter().fold(0.0, |m, l| m.max(l.max_rel_error))
    }

    fn failure(tolerance: f64, location: String) -> Self {
        Self {
            tolerance,
            layers: Vec::new(),
            kinks: Vec::new(),
            non_finite: Some(location),
            passed: false,
        }
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for l in &self.layers {
            let name = match l.layer {
                Some(i) => format!("layer {i:>2} {:<16}", l.kind),
                None => format!("{:<25}", "input"),
            };
            writeln!(
                f,
                "{name} checked {:>6}  max rel err {:.3e}  {}",
                l.checked,
                l.max_rel_error,
                if l.passed { "ok" } else { "FAIL" }
            )?;
        }
        if !self.kinks.is_empty() {
            writeln!(f, "relu kinks crossed: {}", self.kinks.len())?;
        }
        if let Some(loc) = &self.non_finite {
            writeln!(f, "non-finite value at {loc}")?;
        }
        write!(
            f,
            "overall: {} (tolerance {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.tolerance
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

pub fn grad_check(
    spec: &NetworkSpec,
    params: &NetworkParams,
    input: &Tensor,
    loss: &dyn Loss,
    tolerance: f64,
) -> GradCheckReport {
    grad_check_with(spec, params, input, loss, &GradCheckOptions::with_tolerance(tolerance))
}

pub fn grad_check_with(
    spec: &NetworkSpec,
    params: &NetworkParams,
    input: &Tensor,
    loss: &dyn Loss,
    opts: &GradCheckOptions,
) -> GradCheckReport {
    let tol = opts.tolerance;
    let base = match spec.forward_trace(params, input) {
        Ok(t) => t,
        Err(e) => return GradCheckReport::failure(tol, e.to_string()),
    };
    let base_loss = loss.value(base.output());
    if !base_loss.is_finite() {
        return GradCheckReport::failure(tol, "loss value".into());
    }
    let upstream = loss.gradient(base.output());
    if let Some(i) = upstream.first_non_finite() {
        return GradCheckReport::failure(tol, format!("loss gradient[{i}]"));
    }
    let mut analytic = super::network::Gradients::zeros_like(spec, params);
    if let Err(e) = spec.backward_trace(params, &base, &upstream, &mut analytic) {
        return GradCheckReport::failure(tol, e.to_string());
    }
    if !analytic.is_finite() {
        return GradCheckReport::failure(tol, "analytic parameter gradient".into());
    }

    let base_pattern = relu_pattern(spec, &base);
    let mut kinks: Vec<KinkSite> = relu_exact_zeros(spec, &base);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut layers = Vec::new();
    let mut non_finite = None;
    let mut probe = params.clone();

    let eval = |p: &NetworkParams, x: &Tensor, kinks: &mut Vec<KinkSite>| -> Option<f64> {
        let trace = spec.forward_trace(p, x).ok()?;
        for site in pattern_flips(&base_pattern, &relu_pattern(spec, &trace)) {
            if !kinks.contains(&site) {
                kinks.push(site);
            }
        }
        let v = loss.value(trace.output());
        v.is_finite().then_some(v)
    };

    for (li, layer) in spec.layers().iter().enumerate() {
        let Some(grad) = analytic.layers[li].as_ref() else {
            continue;
        };
        let trainable = params.layers[li].as_ref().unwrap().trainable;
        let n_w = grad.weight.len();
        let total = n_w + grad.bias.len();
        let picks = pick_indices(total, opts.max_per_layer, &mut rng);
        let mut worst: f64 = 0.0;
        for &idx in &picks {
            let a = if idx < n_w {
                grad.weight.data()[idx]
            } else {
                grad.bias.data()[idx - n_w]
            };
            let orig = param_entry(&probe, li, idx, n_w);
            set_param_entry(&mut probe, li, idx, n_w, orig + opts.step);
            let plus = eval(&probe, input, &mut kinks);
            set_param_entry(&mut probe, li, idx, n_w, orig - opts.step);
            let minus = eval(&probe, input, &mut kinks);
            set_param_entry(&mut probe, li, idx, n_w, orig);
            let (Some(plus), Some(minus)) = (plus, minus) else {
                non_finite.get_or_insert_with(|| format!("layer {li} parameter {idx}"));
                continue;
            };
            // Frozen layers report zero gradients by contract; compare against that.
            let numeric = if trainable {
                (plus - minus) / (2.0 * opts.step)
            } else {
                0.0
            };
            worst = worst.max(relative_error(a, numeric));
        }
        layers.push(LayerCheck {
            layer: Some(li),
            kind: layer.kind_name(),
            checked: picks.len(),
            max_rel_error: worst,
            passed: worst <= tol,
        });
    }

    if opts.check_input {
        let picks = pick_indices(input.len(), opts.max_per_layer, &mut rng);
        let mut x = input.clone();
        let mut worst: f64 = 0.0;
        for &idx in &picks {
            let orig = x.data()[idx];
            x.data_mut()[idx] = orig + opts.step;
            let plus = eval(params, &x, &mut kinks);
            x.data_mut()[idx] = orig - opts.step;
            let minus = eval(params, &x, &mut kinks);
            x.data_mut()[idx] = orig;
            let (Some(plus), Some(minus)) = (plus, minus) else {
                non_finite.get_or_insert_with(|| format!("input {idx}"));
                continue;
            };
            let numeric = (plus - minus) / (2.0 * opts.step);
            worst = worst.max(relative_error(analytic.input.data()[idx], numeric));
        }
        layers.push(LayerCheck {
            layer: None,
            kind: "input",
            checked: picks.len(),
            max_rel_error: worst,
            passed: worst <= tol,
        });
    }

    let passed = non_finite.is_none() && kinks.is_empty() && layers.iter().all(|l| l.passed);
    GradCheckReport {
        tolerance: tol,
        layers,
        kinks,
        non_finite,
        passed,
    }
}

fn pick_indices(total: usize, limit: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match limit {
        Some(m) if m < total => {
            let mut v = sample(rng, total, m).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..total).collect(),
    }
}

fn param_entry(p: &NetworkParams, layer: usize, idx: usize, n_w: usize) -> f64 {
    let lp = p.layers[layer].as_ref().unwrap();
    if idx < n_w {
        lp.weight.data()[idx]
    } else {
        lp.bias.data()[idx - n_w]
    }
}

fn set_param_entry(p: &mut NetworkParams, layer: usize, idx: usize, n_w: usize, v: f64) {
    let lp = p.layers[layer].as_mut().unwrap();
    if idx < n_w {
        lp.weight.data_mut()[idx] = v;
    } else {
        lp.bias.data_mut()[idx - n_w] = v;
    }
}

/// Sign pattern of every ReLU input, per ReLU layer.
fn relu_pattern(spec: &NetworkSpec, trace: &Trace) -> Vec<(usize, Vec<bool>)> {
    spec.layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| {
            matches!(
                l,
                LayerSpec::Activation {
                    function: Activation::Relu
                }
            )
        })
        .map(|(i, _)| (i, trace.activations[i].data().iter().map(|&z| z > 0.0).collect()))
        .collect()
}

fn relu_exact_zeros(spec: &NetworkSpec, trace: &Trace) -> Vec<KinkSite> {
    relu_pattern(spec, trace)
        .into_iter()
        .flat_map(|(layer, _)| {
            trace.activations[layer]
                .data()
                .iter()
                .enumerate()
                .filter(|(_, &z)| z == 0.0)
                .map(move |(unit, _)| KinkSite { layer, unit })
                .collect::<Vec<_>>()
        })
        .collect()
}

fn pattern_flips(base: &[(usize, Vec<bool>)], other: &[(usize, Vec<bool>)]) -> Vec<KinkSite> {
    let mut out = Vec::new();
    for ((layer, a), (_, b)) in base.iter().zip(other) {
        for (unit, (x, y)) in a.iter().zip(b).enumerate() {
            if x != y {
                out.push(KinkSite {
                    layer: *layer,
                    unit,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::loss::MeanSquaredError;
    use rand::Rng;

    #[test]
    fn linear_network_passes_tight_tolerance() {
        let spec = NetworkSpec::new(
            vec![3],
            vec![LayerSpec::dense(3, 4), LayerSpec::dense(4, 2)],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = NetworkParams::init(&spec, &mut rng);
        let input = Tensor::from_vec(vec![0.4, -0.2, 0.9]);
        let loss = MeanSquaredError::new(Tensor::from_vec(vec![0.5, -0.5]));
        let report = grad_check(&spec, &params, &input, &loss, 1e-6);
        assert!(report.passed, "{report}");
    }

    #[test]
    fn kink_is_flagged() {
        let spec = NetworkSpec::new(
            vec![1],
            vec![LayerSpec::dense(1, 1), LayerSpec::act(Activation::Relu)],
        )
        .unwrap();
        let mut params = NetworkParams::zeros(&spec);
        params.layers[0].as_mut().unwrap().weight.fill(1.0);
        let loss = MeanSquaredError::new(Tensor::from_vec(vec![1.0]));
        let report = grad_check(&spec, &params, &Tensor::from_vec(vec![0.0]), &loss, 1e-4);
        assert!(!report.passed);
        assert!(!report.kinks.is_empty());
        assert_eq!(report.kinks[0], KinkSite { layer: 1, unit: 0 });
    }

    #[test]
    fn zero_tolerance_fails_on_rounding() {
        let spec = NetworkSpec::new(
            vec![4],
            vec![
                LayerSpec::dense(4, 5),
                LayerSpec::act(Activation::Tanh),
                LayerSpec::dense(5, 2),
                LayerSpec::act(Activation::Sigmoid),
            ],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = NetworkParams::init(&spec, &mut rng);
        let input = Tensor::from_vec((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let loss = MeanSquaredError::new(Tensor::from_vec(vec![0.1, 0.9]));
        assert!(!grad_check(&spec, &params, &input, &loss, 0.0).passed);
        assert!(grad_check(&spec, &params, &input, &loss, 1e-4).passed);
    }

    #[test]
    fn non_finite_input_fails_with_location() {
        let spec = NetworkSpec::new(vec![2], vec![LayerSpec::dense(2, 1)]).unwrap();
        let params = NetworkParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(0));
        let loss = MeanSquaredError::new(Tensor::from_vec(vec![0.0]));
        let report = grad_check(
            &spec,
            &params,
            &Tensor::from_vec(vec![f64::INFINITY, 0.0]),
            &loss,
            1e-4,
        );
        assert!(!report.passed);
        assert!(report.non_finite.unwrap().contains("network output"));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn convolutions_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cases = [
            (vec![2, 6, 6], LayerSpec::conv(2, 3, 3, 2)),
            (vec![2, 5, 5], LayerSpec::conv(2, 2, 3, 1)),
            (
                vec![1, 5, 5],
                LayerSpec::Conv2d {
                    in_channels: 1,
                    out_channels: 2,
                    kernel: 3,
                    stride: 1,
                    padding: crate::nn::Padding::Valid,
                },
            ),
            (vec![2, 3, 3], LayerSpec::upconv(2, 3, 3, 2)),
        ];
        for (shape, layer) in cases {
            let spec = NetworkSpec::new(shape.clone(), vec![layer.clone()]).unwrap();
            let params = NetworkParams::init(&spec, &mut rng);
            let n: usize = shape.iter().product();
            let input = Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let out = spec.output_shape().to_vec();
            let m: usize = out.iter().product();
            let target = Tensor::new(out, (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let report = grad_check(&spec, &params, &input, &MeanSquaredError::new(target), 1e-6);
            assert!(report.passed, "{layer:?}\n{report}");
        }
    }
}
