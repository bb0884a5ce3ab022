//! Tolerance falsification for closed-loop control systems.
//!
//! Given a parametric system, a black-box deterministic controller, and an
//! STL safety specification, this crate searches for the smallest deviation
//! of system parameters from nominal under which some trajectory violates
//! the specification.
//!
//! The pieces:
//!
//! - [`stl`] — STL formulas, a text parser, and quantitative robustness
//!   evaluation over discrete-time traces.
//! - [`envs`] — parametric discrete-time simulators (cart-pole, water tank,
//!   adaptive cruise control, a kinematic car, and an analytic test system).
//! - [`control`] — deterministic policies: PID, affine state feedback, and
//!   a fixed-weight MLP loader.
//! - [`search`] — bounded-box derivative-free optimizers (CMA-ES and
//!   uniform random sampling) with an ask/tell interface.
//! - [`falsify`] — the falsification algorithms: per-deviation lower-layer
//!   search, deviation distance, trajectory similarity, the two-layer
//!   campaign, and a one-layer baseline.
//! - [`oracle`] — brute-force grid characterization of the deviation space
//!   plus heatmap rendering (CSV + SVG).

pub mod control;
pub mod envs;
pub mod falsify;
pub mod oracle;
pub mod search;
pub mod seed;
pub mod stl;

#[cfg(feature = "testkit")]
pub mod testkit;

pub use control::Policy;
pub use envs::{DeviationSpace, SystemId, SystemInstance, SystemModel};
pub use falsify::{
    CampaignConfig, CampaignReport, DeviationRecord, FalsificationOutcome, OneLayerConfig,
};
pub use oracle::Grid;
pub use search::{Optimizer, OptimizerKind};
pub use stl::{Formula, SignalSchema, Trace};
