//! Deterministic control policies mapping observations to actions.
//!
//! Three kinds: PID on a scalar error, affine state feedback (`u = K x + b`,
//! which covers LQR gains and set-point regulators), and a fixed-weight
//! multilayer perceptron loaded from JSON. All are deterministic; the PID's
//! integrator/derivative scratch belongs to the episode and is cleared by
//! [`Policy::reset_episode`].
//!
//! Policy files are JSON with a versioned `schema` field, e.g.
//!
//! ```json
//! { "schema": "tolfal-policy/v1", "kind": "pid",
//!   "kp": 1.2, "ki": 0.15, "kd": 0.4, "dt": 0.1,
//!   "integral_limit": 10.0, "output_low": [0.0], "output_high": [1.0] }
//! ```

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const POLICY_SCHEMA: &str = "tolfal-policy/v1";

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("policy expects input dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("layer {layer}: weight rows {rows} do not match bias length {bias}")]
    ShapeMismatch { layer: usize, rows: usize, bias: usize },
    #[error("layer {layer}: input width {got} does not chain from previous width {expected}")]
    ChainMismatch { layer: usize, expected: usize, got: usize },
    #[error("mlp needs at least one layer")]
    EmptyNetwork,
    #[error("unsupported policy schema `{0}`, expected `{POLICY_SCHEMA}`")]
    BadSchema(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }
}

/// One dense layer; `weights` is row-major with one row per output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PolicySpec {
    Pid {
        kp: f64,
        ki: f64,
        kd: f64,
        /// Control period used by the integral and derivative terms.
        dt: f64,
        /// Anti-windup clamp on the accumulated integral, `|I| <= limit`.
        integral_limit: f64,
        #[serde(default)]
        output_low: Option<Vec<f64>>,
        #[serde(default)]
        output_high: Option<Vec<f64>>,
    },
    Lqr {
        /// Row-major gain, one row per action component: `u = gain * x + bias`.
        gain: Vec<Vec<f64>>,
        bias: Vec<f64>,
        #[serde(default)]
        output_low: Option<Vec<f64>>,
        #[serde(default)]
        output_high: Option<Vec<f64>>,
    },
    Mlp {
        layers: Vec<Layer>,
        #[serde(default)]
        output_low: Option<Vec<f64>>,
        #[serde(default)]
        output_high: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolicyFile {
    schema: String,
    #[serde(flatten)]
    spec: PolicySpec,
}

/// A deterministic policy plus its per-episode scratch.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    spec: PolicySpec,
    // PID episode scratch.
    integral: f64,
    prev_error: Option<f64>,
}

impl Policy {
    pub fn new(spec: PolicySpec) -> Result<Self, ControlError> {
        validate(&spec)?;
        Ok(Self { spec, integral: 0.0, prev_error: None })
    }

    pub fn pid(kp: f64, ki: f64, kd: f64, dt: f64, integral_limit: f64) -> Self {
        Self::new(PolicySpec::Pid {
            kp,
            ki,
            kd,
            dt,
            integral_limit,
            output_low: None,
            output_high: None,
        })
        .expect("pid spec is always valid")
    }

    pub fn lqr(gain: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self, ControlError> {
        Self::new(PolicySpec::Lqr { gain, bias, output_low: None, output_high: None })
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn kind_name(&self) -> &'static str {
        match self.spec {
            PolicySpec::Pid { .. } => "pid",
            PolicySpec::Lqr { .. } => "lqr",
            PolicySpec::Mlp { .. } => "mlp",
        }
    }

    /// Clamp outputs to the given bounds (usually the system's action box).
    pub fn with_output_bounds(mut self, low: Vec<f64>, high: Vec<f64>) -> Self {
        match &mut self.spec {
            PolicySpec::Pid { output_low, output_high, .. }
            | PolicySpec::Lqr { output_low, output_high, .. }
            | PolicySpec::Mlp { output_low, output_high, .. } => {
                *output_low = Some(low);
                *output_high = Some(high);
            }
        }
        self
    }

    /// Expected observation dimension, when the spec pins one (PID is 1,
    /// LQR/MLP derive it from their first weight row).
    pub fn input_dim(&self) -> Option<usize> {
        match &self.spec {
            PolicySpec::Pid { .. } => Some(1),
            PolicySpec::Lqr { gain, .. } => gain.first().map(|r| r.len()),
            PolicySpec::Mlp { layers, .. } => {
                layers.first().and_then(|l| l.weights.first()).map(|r| r.len())
            }
        }
    }

    pub fn output_dim(&self) -> usize {
        match &self.spec {
            PolicySpec::Pid { .. } => 1,
            PolicySpec::Lqr { gain, .. } => gain.len(),
            PolicySpec::Mlp { layers, .. } => {
                layers.last().map(|l| l.bias.len()).unwrap_or(0)
            }
        }
    }

    /// Clear per-episode scratch (PID integral and derivative memory).
    pub fn reset_episode(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    /// Compute the action for an observation.
    pub fn act(&mut self, obs: &[f64]) -> Result<Vec<f64>, ControlError> {
        if let Some(expected) = self.input_dim() {
            if obs.len() != expected {
                return Err(ControlError::DimensionMismatch { expected, got: obs.len() });
            }
        }
        let mut out = match &self.spec {
            PolicySpec::Pid { kp, ki, kd, dt, integral_limit, .. } => {
                let e = obs[0];
                self.integral =
                    (self.integral + e * dt).clamp(-integral_limit, *integral_limit);
                let de = match self.prev_error {
                    Some(prev) => (e - prev) / dt,
                    None => 0.0,
                };
                self.prev_error = Some(e);
                vec![kp * e + ki * self.integral + kd * de]
            }
            PolicySpec::Lqr { gain, bias, .. } => gain
                .iter()
                .zip(bias)
                .map(|(row, b)| row.iter().zip(obs).map(|(k, x)| k * x).sum::<f64>() + b)
                .collect(),
            PolicySpec::Mlp { layers, .. } => {
                let mut x = obs.to_vec();
                for layer in layers {
                    let mut next = Vec::with_capacity(layer.bias.len());
                    for (row, b) in layer.weights.iter().zip(&layer.bias) {
                        let z = row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + b;
                        next.push(layer.activation.apply(z));
                    }
                    x = next;
                }
                x
            }
        };
        let (low, high) = match &self.spec {
            PolicySpec::Pid { output_low, output_high, .. }
            | PolicySpec::Lqr { output_low, output_high, .. }
            | PolicySpec::Mlp { output_low, output_high, .. } => (output_low, output_high),
        };
        if let (Some(lo), Some(hi)) = (low, high) {
            for (v, (l, h)) in out.iter_mut().zip(lo.iter().zip(hi)) {
                *v = v.clamp(*l, *h);
            }
        }
        Ok(out)
    }
}

fn validate(spec: &PolicySpec) -> Result<(), ControlError> {
    if let PolicySpec::Mlp { layers, .. } = spec {
        if layers.is_empty() {
            return Err(ControlError::EmptyNetwork);
        }
        let mut width: Option<usize> = None;
        for (i, layer) in layers.iter().enumerate() {
            if layer.weights.len() != layer.bias.len() {
                return Err(ControlError::ShapeMismatch {
                    layer: i,
                    rows: layer.weights.len(),
                    bias: layer.bias.len(),
                });
            }
            let in_width = layer.weights.first().map(|r| r.len()).unwrap_or(0);
            if layer.weights.iter().any(|r| r.len() != in_width) {
                return Err(ControlError::ShapeMismatch {
                    layer: i,
                    rows: layer.weights.len(),
                    bias: layer.bias.len(),
                });
            }
            if let Some(w) = width {
                if in_width != w {
                    return Err(ControlError::ChainMismatch {
                        layer: i,
                        expected: w,
                        got: in_width,
                    });
                }
            }
            width = Some(layer.bias.len());
        }
    }
    if let PolicySpec::Lqr { gain, bias, .. } = spec {
        if gain.len() != bias.len() {
            return Err(ControlError::ShapeMismatch {
                layer: 0,
                rows: gain.len(),
                bias: bias.len(),
            });
        }
        let w = gain.first().map(|r| r.len()).unwrap_or(0);
        if gain.iter().any(|r| r.len() != w) {
            return Err(ControlError::ShapeMismatch {
                layer: 0,
                rows: gain.len(),
                bias: bias.len(),
            });
        }
    }
    Ok(())
}

/// Load a policy from a JSON file; the inverse of [`save_policy`].
pub fn load_policy(path: impl AsRef<Path>) -> Result<Policy, ControlError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ControlError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: PolicyFile =
        serde_json::from_str(&text).map_err(|source| ControlError::Parse {
            path: path.display().to_string(),
            source,
        })?;
    if file.schema != POLICY_SCHEMA {
        return Err(ControlError::BadSchema(file.schema));
    }
    Policy::new(file.spec)
}

pub fn save_policy(policy: &Policy, path: impl AsRef<Path>) -> Result<(), ControlError> {
    let path = path.as_ref();
    let file = PolicyFile { schema: POLICY_SCHEMA.to_string(), spec: policy.spec.clone() };
    let text = serde_json::to_string_pretty(&file).expect("policy serializes");
    std::fs::write(path, text).map_err(|source| ControlError::Io {
        path: path.display().to_string(),
        source,
    })
}
