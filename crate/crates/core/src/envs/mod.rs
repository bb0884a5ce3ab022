//! Parametric discrete-time simulators.
//!
//! A [`SystemModel`] describes one benchmark family: state/action spaces,
//! timestep, horizon, initial-state box, piecewise-constant disturbance
//! parameterization, the deviation space, and the default STL spec. A
//! [`SystemInstance`] is the model closed over a concrete deviation point;
//! stepping integrates the system ODE with RK4 under zero-order-hold
//! actions.
//!
//! All stochasticity is externalized: a rollout is a pure function of
//! (model, deviation, policy, initial state, disturbance control points),
//! so identical inputs produce bit-identical traces.

pub mod dynamics;
pub mod registry;

use crate::control::{ControlError, Policy};
use crate::stl::{Formula, SignalSchema, StlError, Trace};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use thiserror::Error;

/// States with any component beyond this magnitude count as blown up.
pub const BLOWUP_LIMIT: f64 = 1e6;
/// Tolerance for boundary checks on deviations, initial states and
/// disturbance points; values this far outside are clipped, not rejected.
pub const BOUNDS_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("deviation dim {dim} = {value} outside [{lo}, {hi}]")]
    DeltaOutOfBounds { dim: usize, value: f64, lo: f64, hi: f64 },
    #[error("deviation has {got} dims, space has {expected}")]
    DeltaDimMismatch { expected: usize, got: usize },
    #[error("initial state dim {dim} = {value} outside [{lo}, {hi}]")]
    InitOutOfBox { dim: usize, value: f64, lo: f64, hi: f64 },
    #[error("initial state has {got} dims, model has {expected}")]
    InitDimMismatch { expected: usize, got: usize },
    #[error("disturbance point {index} = {value} outside [{lo}, {hi}]")]
    DisturbanceOutOfRange { index: usize, value: f64, lo: f64, hi: f64 },
    #[error("expected {expected} disturbance points, got {got}")]
    DisturbanceCountMismatch { expected: usize, got: usize },
    #[error("model invalid: {0}")]
    ModelInvalid(String),
    #[error(transparent)]
    Spec(#[from] StlError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Box of deviation parameters with a nominal point strictly inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationSpace {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nominal: Vec<f64>,
}

impl DeviationSpace {
    pub fn new(
        names: Vec<String>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        nominal: Vec<f64>,
    ) -> Result<Self, EnvError> {
        let k = names.len();
        if lower.len() != k || upper.len() != k || nominal.len() != k {
            return Err(EnvError::ModelInvalid(
                "deviation space field lengths disagree".into(),
            ));
        }
        for i in 0..k {
            if !(lower[i] < upper[i]) {
                return Err(EnvError::ModelInvalid(format!(
                    "deviation dim {i}: lower {} must be < upper {}",
                    lower[i], upper[i]
                )));
            }
            if !(nominal[i] > lower[i] && nominal[i] < upper[i]) {
                return Err(EnvError::ModelInvalid(format!(
                    "deviation dim {i}: nominal {} must be strictly inside ({}, {})",
                    nominal[i], lower[i], upper[i]
                )));
            }
        }
        Ok(Self { names, lower, upper, nominal })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// Per-dimension normalized deviation from nominal: `(d_i - n_i) / (hi_i - lo_i)`.
    pub fn normalized(&self, delta: &[f64]) -> Vec<f64> {
        delta
            .iter()
            .zip(&self.nominal)
            .zip(self.lower.iter().zip(&self.upper))
            .map(|((d, n), (lo, hi))| (d - n) / (hi - lo))
            .collect()
    }

    /// Normalized l2 distance from the nominal point. The synthetic-disk
    /// dynamics and the deviation-distance metric both use this, so the
    /// analytic system's robustness matches the metric bit-exactly.
    pub fn normalized_l2(&self, delta: &[f64]) -> f64 {
        self.normalized(delta).iter().map(|z| z * z).sum::<f64>().sqrt()
    }

    /// Validate a point, clipping values within `BOUNDS_EPS` of the box.
    pub fn clip(&self, delta: &[f64]) -> Result<Vec<f64>, EnvError> {
        if delta.len() != self.dim() {
            return Err(EnvError::DeltaDimMismatch { expected: self.dim(), got: delta.len() });
        }
        let mut out = Vec::with_capacity(delta.len());
        for (i, &v) in delta.iter().enumerate() {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if v < lo - BOUNDS_EPS || v > hi + BOUNDS_EPS || !v.is_finite() {
                return Err(EnvError::DeltaOutOfBounds { dim: i, value: v, lo, hi });
            }
            out.push(v.clamp(lo, hi));
        }
        Ok(out)
    }
}

/// Piecewise-constant disturbance inputs: `points_per_dim` control points
/// per disturbance dimension, each within that dimension's range, held
/// constant over equal segments of the rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    pub dims: usize,
    pub points_per_dim: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DisturbanceSpec {
    pub fn none() -> Self {
        Self { dims: 0, points_per_dim: 0, lower: vec![], upper: vec![] }
    }

    pub fn point_count(&self) -> usize {
        self.dims * self.points_per_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemId {
    Cartpole,
    Watertank,
    Acc,
    Carrun,
    SyntheticDisk,
}

impl SystemId {
    pub fn name(&self) -> &'static str {
        match self {
            SystemId::Cartpole => "cartpole",
            SystemId::Watertank => "watertank",
            SystemId::Acc => "acc",
            SystemId::Carrun => "carrun",
            SystemId::SyntheticDisk => "synthetic-disk",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "cartpole" => Some(SystemId::Cartpole),
            "watertank" => Some(SystemId::Watertank),
            "acc" => Some(SystemId::Acc),
            "carrun" => Some(SystemId::Carrun),
            "synthetic-disk" => Some(SystemId::SyntheticDisk),
            _ => None,
        }
    }

    pub fn all() -> [SystemId; 5] {
        [
            SystemId::Cartpole,
            SystemId::Watertank,
            SystemId::Acc,
            SystemId::Carrun,
            SystemId::SyntheticDisk,
        ]
    }

    /// The real benchmarks, excluding the analytic test system.
    pub fn benchmarks() -> [SystemId; 4] {
        [SystemId::Cartpole, SystemId::Watertank, SystemId::Acc, SystemId::Carrun]
    }
}

impl std::fmt::Display for SystemId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A parametric system family. Immutable and shareable; instances carry
/// the mutable per-rollout state.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub id: SystemId,
    pub state_dim: usize,
    pub action_dim: usize,
    pub dt: f64,
    pub horizon_steps: usize,
    pub init_lower: Vec<f64>,
    pub init_upper: Vec<f64>,
    pub disturbance: DisturbanceSpec,
    pub deviation: DeviationSpace,
    pub spec_text: String,
    pub schema: SignalSchema,
    pub action_lower: Vec<f64>,
    pub action_upper: Vec<f64>,
    sim_calls: Arc<AtomicU64>,
}

impl SystemModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: SystemId,
        state_dim: usize,
        action_dim: usize,
        dt: f64,
        horizon_steps: usize,
        init_lower: Vec<f64>,
        init_upper: Vec<f64>,
        disturbance: DisturbanceSpec,
        deviation: DeviationSpace,
        spec_text: String,
        schema: SignalSchema,
        action_lower: Vec<f64>,
        action_upper: Vec<f64>,
    ) -> Result<Self, EnvError> {
        let model = Self {
            id,
            state_dim,
            action_dim,
            dt,
            horizon_steps,
            init_lower,
            init_upper,
            disturbance,
            deviation,
            spec_text,
            schema,
            action_lower,
            action_upper,
            sim_calls: Arc::new(AtomicU64::new(0)),
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), EnvError> {
        if self.dt <= 0.0 {
            return Err(EnvError::ModelInvalid("dt must be positive".into()));
        }
        if self.init_lower.len() != self.state_dim || self.init_upper.len() != self.state_dim {
            return Err(EnvError::ModelInvalid("initial box dims disagree with state".into()));
        }
        if self.init_lower.iter().zip(&self.init_upper).any(|(l, u)| l > u) {
            return Err(EnvError::ModelInvalid("initial box is empty".into()));
        }
        if self.schema.len() != self.state_dim {
            return Err(EnvError::ModelInvalid("schema length disagrees with state dim".into()));
        }
        if self.action_lower.len() != self.action_dim || self.action_upper.len() != self.action_dim
        {
            return Err(EnvError::ModelInvalid("action bounds disagree with action dim".into()));
        }
        if self.disturbance.lower.len() != self.disturbance.dims
            || self.disturbance.upper.len() != self.disturbance.dims
        {
            return Err(EnvError::ModelInvalid("disturbance ranges disagree with dims".into()));
        }
        let spec = self.spec_formula()?;
        let duration = self.horizon_steps as f64 * self.dt;
        if spec.horizon() > duration + BOUNDS_EPS {
            return Err(EnvError::ModelInvalid(format!(
                "spec horizon {} exceeds trace duration {}",
                spec.horizon(),
                duration
            )));
        }
        Ok(())
    }

    pub fn spec_formula(&self) -> Result<Formula, StlError> {
        crate::stl::parse_formula(&self.spec_text, &self.schema)
    }

    /// Rollouts performed by instances of this model so far. The counter is
    /// shared across clones of the model.
    pub fn sim_calls(&self) -> u64 {
        self.sim_calls.load(Ordering::Relaxed)
    }

    /// Box of the lower-layer search variables: the initial state followed
    /// by the flattened disturbance control points (dimension-major).
    pub fn lower_layer_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = self.init_lower.clone();
        let mut hi = self.init_upper.clone();
        for d in 0..self.disturbance.dims {
            for _ in 0..self.disturbance.points_per_dim {
                lo.push(self.disturbance.lower[d]);
                hi.push(self.disturbance.upper[d]);
            }
        }
        (lo, hi)
    }

    /// Split a lower-layer variable vector into (initial state, points).
    pub fn split_lower_vars<'v>(&self, vars: &'v [f64]) -> (&'v [f64], &'v [f64]) {
        vars.split_at(self.state_dim)
    }

    /// Close the model over a concrete deviation. Instantiating at the
    /// nominal point yields the nominal dynamics.
    pub fn instantiate(&self, delta: &[f64]) -> Result<SystemInstance<'_>, EnvError> {
        let delta = self.deviation.clip(delta)?;
        Ok(SystemInstance {
            model: self,
            delta,
            state: vec![0.0; self.state_dim],
            truncated: false,
        })
    }
}

/// Convenience free function mirroring the model method.
pub fn instantiate<'m>(model: &'m SystemModel, delta: &[f64]) -> Result<SystemInstance<'m>, EnvError> {
    model.instantiate(delta)
}

/// Concrete dynamics closed over a deviation point, with mutable rollout
/// state. Single-threaded; concurrent workers each instantiate their own.
pub struct SystemInstance<'m> {
    model: &'m SystemModel,
    delta: Vec<f64>,
    state: Vec<f64>,
    truncated: bool,
}

impl<'m> SystemInstance<'m> {
    pub fn model(&self) -> &SystemModel {
        self.model
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub fn reset(&mut self, init: &[f64]) -> Result<(), EnvError> {
        if init.len() != self.model.state_dim {
            return Err(EnvError::InitDimMismatch {
                expected: self.model.state_dim,
                got: init.len(),
            });
        }
        for (i, &v) in init.iter().enumerate() {
            let (lo, hi) = (self.model.init_lower[i], self.model.init_upper[i]);
            if v < lo - BOUNDS_EPS || v > hi + BOUNDS_EPS || !v.is_finite() {
                return Err(EnvError::InitOutOfBox { dim: i, value: v, lo, hi });
            }
        }
        self.state = init
            .iter()
            .enumerate()
            .map(|(i, &v)| v.clamp(self.model.init_lower[i], self.model.init_upper[i]))
            .collect();
        self.truncated = false;
        Ok(())
    }

    /// What the policy sees at the current state.
    pub fn observe(&self, disturbance: &[f64]) -> Vec<f64> {
        dynamics::observe(self.model.id, &self.state, disturbance, &self.delta)
    }

    /// Advance one step of `dt` under a zero-order-hold action. The action
    /// is clamped to the model's action box before integration. On blow-up
    /// (non-finite or huge state) the last finite state is frozen and the
    /// instance is flagged truncated.
    pub fn step(&mut self, action: &[f64], disturbance: &[f64]) -> &[f64] {
        if self.truncated {
            return &self.state;
        }
        let mut act = action.to_vec();
        for (i, a) in act.iter_mut().enumerate() {
            *a = a.clamp(self.model.action_lower[i], self.model.action_upper[i]);
        }
        let next = dynamics::step(
            self.model.id,
            &self.state,
            &act,
            disturbance,
            &self.delta,
            &self.model.deviation,
            self.model.dt,
        );
        if next.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_LIMIT) {
            self.truncated = true;
        } else {
            self.state = next;
        }
        &self.state
    }
}

/// Disturbance value vector at step `k` of a rollout of `horizon` steps,
/// from the flattened control points.
fn disturbance_at(spec: &DisturbanceSpec, points: &[f64], k: usize, horizon: usize) -> Vec<f64> {
    let c = spec.points_per_dim;
    if spec.dims == 0 || c == 0 || horizon == 0 {
        return vec![0.0; spec.dims];
    }
    let seg = (k * c / horizon).min(c - 1);
    (0..spec.dims).map(|d| points[d * c + seg]).collect()
}

/// Closed-loop rollout: `horizon` steps from `init` under `policy`, with
/// piecewise-constant disturbances decoded from `points`.
///
/// Deterministic: identical inputs give bit-identical traces. The seed is
/// metadata only. Each call increments the model's simulation counter by
/// exactly one, regardless of horizon.
pub fn simulate(
    inst: &mut SystemInstance<'_>,
    policy: &mut Policy,
    init: &[f64],
    points: &[f64],
    horizon: usize,
    seed: u64,
) -> Result<Trace, EnvError> {
    let model = inst.model;
    if points.len() != model.disturbance.point_count() {
        return Err(EnvError::DisturbanceCountMismatch {
            expected: model.disturbance.point_count(),
            got: points.len(),
        });
    }
    for (i, &p) in points.iter().enumerate() {
        let d = i / model.disturbance.points_per_dim.max(1);
        let (lo, hi) = (model.disturbance.lower[d], model.disturbance.upper[d]);
        if p < lo - BOUNDS_EPS || p > hi + BOUNDS_EPS || !p.is_finite() {
            return Err(EnvError::DisturbanceOutOfRange { index: i, value: p, lo, hi });
        }
    }
    inst.reset(init)?;
    policy.reset_episode();
    model.sim_calls.fetch_add(1, Ordering::Relaxed);

    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    states.push(inst.state().to_vec());
    for k in 0..horizon {
        let dist = disturbance_at(&model.disturbance, points, k, horizon);
        let obs = inst.observe(&dist);
        let action = policy.act(&obs)?;
        inst.step(&action, &dist);
        actions.push(action);
        states.push(inst.state().to_vec());
    }
    let mut trace = Trace::new(model.dt, states, Some(actions));
    trace.truncated = inst.truncated();
    trace.seed = seed;
    trace.deviation = Some(inst.delta().to_vec());
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deviation_space_rejects_bad_boxes() {
        assert!(DeviationSpace::new(
            vec!["a".into()],
            vec![1.0],
            vec![0.0],
            vec![0.5]
        )
        .is_err());
        assert!(DeviationSpace::new(
            vec!["a".into()],
            vec![0.0],
            vec![1.0],
            vec![1.0] // on the boundary, not strictly inside
        )
        .is_err());
    }

    #[test]
    fn clip_tolerates_epsilon_and_rejects_more() {
        let sp = DeviationSpace::new(
            vec!["a".into()],
            vec![0.0],
            vec![1.0],
            vec![0.5],
        )
        .unwrap();
        let clipped = sp.clip(&[1.0 + 0.5e-9]).unwrap();
        assert_eq!(clipped, vec![1.0]);
        assert!(matches!(
            sp.clip(&[1.0 + 1e-6]),
            Err(EnvError::DeltaOutOfBounds { .. })
        ));
    }

    #[test]
    fn disturbance_segments_cover_the_rollout() {
        let spec = DisturbanceSpec {
            dims: 1,
            points_per_dim: 3,
            lower: vec![-1.0],
            upper: vec![1.0],
        };
        let points = [10.0, 20.0, 30.0];
        let h = 9;
        let vals: Vec<f64> = (0..h).map(|k| disturbance_at(&spec, &points, k, h)[0]).collect();
        assert_eq!(vals, vec![10.0, 10.0, 10.0, 20.0, 20.0, 20.0, 30.0, 30.0, 30.0]);
    }
}
