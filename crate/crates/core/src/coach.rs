//! Classic COACH: a linear-in-features policy on radial basis functions,
//! corrected by binary advice and modulated by a learned model of the
//! teacher's feedback.

use serde::{Deserialize, Serialize};

use crate::env::ActionBounds;
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, LayerParams, LayerSpec, NetworkParams, NetworkSpec, Tensor};

/// Unnormalised Gaussian bumps `exp(-|s - c|^2 / (2 w^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfFeatureMap {
    centers: Vec<Vec<f64>>,
    widths: Vec<f64>,
}

impl RbfFeatureMap {
    pub fn new(centers: Vec<Vec<f64>>, widths: Vec<f64>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidConfig("an RBF map needs at least one center".into()));
        }
        if centers.len() != widths.len() {
            return Err(Error::InvalidConfig("one width per RBF center".into()));
        }
        let dim = centers[0].len();
        if dim == 0 || centers.iter().any(|c| c.len() != dim) {
            return Err(Error::InvalidConfig("RBF centers must share a positive dimension".into()));
        }
        if widths.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig("RBF widths must be positive".into()));
        }
        Ok(Self { centers, widths })
    }

    /// Uniform grid with `per_dim[i]` centers spanning `[lo[i], hi[i]]`. Each
    /// width equals the smallest grid spacing.
    pub fn grid(lo: &[f64], hi: &[f64], per_dim: &[usize]) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != per_dim.len() || lo.is_empty() {
            return Err(Error::InvalidConfig("grid bounds and counts must share a dimension".into()));
        }
        if per_dim.iter().any(|&n| n < 2) || lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
            return Err(Error::InvalidConfig("grid needs >= 2 centers per dim and lo < hi".into()));
        }
        let spacing: Vec<f64> = (0..lo.len())
            .map(|i| (hi[i] - lo[i]) / (per_dim[i] - 1) as f64)
            .collect();
        let width = spacing.iter().copied().fold(f64::INFINITY, f64::min);
        let mut centers = vec![Vec::new()];
        for i in 0..lo.len() {
            let (start, step) = (lo[i], spacing[i]);
            centers = centers
                .into_iter()
                .flat_map(|prefix| {
                    (0..per_dim[i]).map(move |k| {
                        let mut c = prefix.clone();
                        c.push(start + k as f64 * step);
                        c
                    })
                })
                .collect();
        }
        let n = centers.len();
        Self::new(centers, vec![width; n])
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn features(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.state_dim() {
            return Err(Error::ShapeMismatch {
                context: "RBF state".into(),
                expected: vec![self.state_dim()],
                found: vec![state.len()],
            });
        }
        Ok(self
            .centers
            .iter()
            .zip(&self.widths)
            .map(|(c, w)| {
                let d2: f64 = c.iter().zip(state).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * w * w)).exp()
            })
            .collect())
    }
}

/// Feature-to-action linear map, one column per action dimension. Used both
/// for the policy parameters and the teacher-feedback model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMap {
    features: usize,
    actions: usize,
    /// Row-major `[features][actions]`.
    weights: Vec<f64>,
}

impl LinearMap {
    pub fn zeros(features: usize, actions: usize) -> Self {
        Self {
            features,
            actions,
            weights: vec![0.0; features * actions],
        }
    }

    pub fn from_weights(features: usize, actions: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != features * actions {
            return Err(Error::ShapeMismatch {
                context: "linear map weights".into(),
                expected: vec![features, actions],
                found: vec![weights.len()],
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite {
                location: "linear map weights".into(),
            });
        }
        Ok(Self {
            features,
            actions,
            weights,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, feature: usize, action: usize) -> f64 {
        self.weights[feature * self.actions + action]
    }

    /// `f^T W` for one action dimension.
    pub fn column_dot(&self, f: &[f64], action: usize) -> f64 {
        f.iter()
            .enumerate()
            .map(|(i, fi)| fi * self.weights[i * self.actions + action])
            .sum()
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.actions).map(|a| self.column_dot(f, a)).collect()
    }

    fn add_to_column(&mut self, f: &[f64], action: usize, scale: f64) {
        for (i, fi) in f.iter().enumerate() {
            self.weights[i * self.actions + action] += scale * fi;
        }
    }

    /// The map as a single dense layer (weight `[actions, features]`, zero bias).
    pub fn to_dense(&self) -> (NetworkSpec, NetworkParams) {
        let spec = NetworkSpec::new(
            vec![self.features],
            vec![LayerSpec::dense(self.features, self.actions)],
        )
        .expect("dense layer over a positive feature count");
        let mut w = vec![0.0; self.features * self.actions];
        for f in 0..self.features {
            for a in 0..self.actions {
                w[a * self.features + f] = self.weight(f, a);
            }
        }
        let params = NetworkParams {
            layers: vec![Some(LayerParams {
                weight: Tensor::new(vec![self.actions, self.features], w).expect("sized"),
                bias: Tensor::zeros(&[self.actions]),
                trainable: true,
            })],
        };
        (spec, params)
    }

    pub fn from_dense(params: &NetworkParams) -> Result<Self> {
        let layer = match params.layers.as_slice() {
            [Some(layer)] => layer,
            _ => return Err(Error::Checkpoint("expected a single dense layer".into())),
        };
        let (actions, features) = match *layer.weight.shape() {
            [a, f] => (a, f),
            _ => return Err(Error::Checkpoint("dense weight must be rank 2".into())),
        };
        let mut w = vec![0.0; features * actions];
        for f in 0..features {
            for a in 0..actions {
                w[f * actions + a] = layer.weight.data()[a * features + f];
            }
        }
        Self::from_weights(features, actions, w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoachConfig {
    /// Correction magnitude per action dimension.
    pub e: Vec<f64>,
    /// Learning rate of the feedback model.
    pub beta: f64,
}

impl CoachConfig {
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
        if !(self.beta > 0.0) {
            return Err(Error::InvalidConfig("beta must be positive".into()));
        }
        Ok(())
    }
}

/// What one correction did, per action dimension (zeros where `h` was 0).
#[derive(Debug, Clone, PartialEq)]
pub struct CoachDiagnostics {
    pub alpha: Vec<f64>,
    pub error: Vec<f64>,
}

/// Policy, feedback model and RBF features of one classic COACH learner.
#[derive(Debug, Clone, PartialEq)]
pub struct CoachLearner {
    pub features: RbfFeatureMap,
    pub policy: LinearMap,
    pub human_model: LinearMap,
    pub bounds: ActionBounds,
    pub config: CoachConfig,
}

impl CoachLearner {
    pub fn new(features: RbfFeatureMap, bounds: ActionBounds, config: CoachConfig) -> Result<Self> {
        config.validate(bounds.dims())?;
        let (n, a) = (features.len(), bounds.dims());
        Ok(Self {
            features,
            policy: LinearMap::zeros(n, a),
            human_model: LinearMap::zeros(n, a),
            bounds,
            config,
        })
    }

    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        let f = self.features.features(state)?;
        Ok(self.bounds.clip(&self.policy.apply(&f)))
    }

    /// Predicted feedback, clamped to `[-1, 1]`.
    pub fn predicted_feedback(&self, state: &[f64]) -> Result<Vec<f64>> {
        let f = self.features.features(state)?;
        Ok(self
            .human_model
            .apply(&f)
            .into_iter()
            .map(|h| h.clamp(-1.0, 1.0))
            .collect())
    }

    pub fn update(&mut self, state: &[f64], h: &[i8]) -> Result<CoachDiagnostics> {
        let f = self.features.features(state)?;
        coach_update(
            &f,
            h,
            &mut self.human_model,
            &mut self.policy,
            &self.config,
        )
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::default();
        let (spec, params) = self.policy.to_dense();
        ckpt.push("policy", &spec, &params)?;
        let (spec, params) = self.human_model.to_dense();
        ckpt.push("human_model", &spec, &params)?;
        Ok(ckpt)
    }

    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let (spec, _) = self.policy.to_dense();
        let policy = LinearMap::from_dense(&ckpt.params_for("policy", &spec)?)?;
        let human_model = LinearMap::from_dense(&ckpt.params_for("human_model", &spec)?)?;
        self.policy = policy;
        self.human_model = human_model;
        Ok(())
    }
}

/// One correction at features `f`. For every dimension with nonzero advice:
/// the feedback model is pulled toward `h`, its clamped re-evaluation at the
/// same state becomes the step size, and the policy moves by
/// `alpha * h * e * f`.
pub fn coach_update(
    f: &[f64],
    h: &[i8],
    human_model: &mut LinearMap,
    policy: &mut LinearMap,
    config: &CoachConfig,
) -> Result<CoachDiagnostics> {
    let dims = policy.actions;
    if h.len() != dims || config.e.len() != dims {
        return Err(Error::ShapeMismatch {
            context: "feedback vector".into(),
            expected: vec![dims],
            found: vec![h.len()],
        });
    }
    if f.len() != policy.features || f.len() != human_model.features {
        return Err(Error::ShapeMismatch {
            context: "feature vector".into(),
            expected: vec![policy.features],
            found: vec![f.len()],
        });
    }
    if h.iter().all(|&v| v == 0) {
        return Err(Error::Contract("coach_update called without advice".into()));
    }
    if h.iter().any(|v| !(-1..=1).contains(v)) {
        return Err(Error::Contract(format!("feedback components must be in {{-1,0,1}}: {h:?}")));
    }
    let mut diag = CoachDiagnostics {
        alpha: vec![0.0; dims],
        error: vec![0.0; dims],
    };
    for d in 0..dims {
        if h[d] == 0 {
            continue;
        }
        let hd = h[d] as f64;
        let predicted = human_model.column_dot(f, d);
        human_model.add_to_column(f, d, config.beta * (hd - predicted));
        let alpha = human_model.column_dot(f, d).clamp(-1.0, 1.0).abs();
        let error = hd * config.e[d];
        policy.add_to_column(f, d, alpha * error);
        diag.alpha[d] = alpha;
        diag.error[d] = error;
    }
    if policy.weights.iter().chain(&human_model.weights).any(|w| !w.is_finite()) {
        return Err(Error::NonFinite {
            location: "COACH parameters".into(),
        });
    }
    Ok(diag)
}
