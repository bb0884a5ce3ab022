//! Signal temporal logic over discrete-time traces.
//!
//! Formulas are built from predicates of the normalized form `μ(s(t)) > 0`
//! and the bounded-time operators `not`, `and`, `or`, `until`, `eventually`,
//! `always`. Robustness is the usual quantitative semantics with sup/inf
//! replaced by max/min over the samples whose times fall in the (shifted)
//! interval, inclusive at both ends with a 1e-9 tolerance on the boundary
//! comparisons.
//!
//! A robustness value of exactly zero counts as satisfied.

mod parser;

pub use parser::parse_formula;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Boundary tolerance for mapping interval endpoints onto the sample grid.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum StlError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown signal name `{name}` at position {pos}")]
    UnknownSignal { name: String, pos: usize },
    #[error("bad interval [{a}, {b}]: bounds must satisfy 0 <= a <= b")]
    BadInterval { a: f64, b: f64 },
    #[error(
        "trace too short: evaluation at t={t} needs duration {needed}, trace has {have}"
    )]
    TraceTooShort { t: f64, needed: f64, have: f64 },
    #[error("interval [{a}, {b}] shifted to t={t} contains no sample (dt={dt})")]
    EmptyWindow { a: f64, b: f64, t: f64, dt: f64 },
    #[error("predicate references component {index} but trace has dimension {dim}")]
    BadComponent { index: usize, dim: usize },
}

/// Maps signal names to state-vector component indices.
///
/// Order is the component order of the trace's state vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignalSchema {
    names: Vec<String>,
}

impl SignalSchema {
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Self {
        Self { names: names.iter().map(|s| s.as_ref().to_string()).collect() }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Arithmetic expression over state-vector components: affine combinations
/// plus `abs`. Richer nonlinearities are out of scope.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Named component; the index points into the trace's state vectors.
    Var { name: String, index: usize },
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Abs(Box<Expr>),
}

impl Expr {
    pub fn eval(&self, state: &[f64]) -> Result<f64, StlError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var { index, .. } => *state
                .get(*index)
                .ok_or(StlError::BadComponent { index: *index, dim: state.len() })?,
            Expr::Neg(e) => -e.eval(state)?,
            Expr::Add(a, b) => a.eval(state)? + b.eval(state)?,
            Expr::Sub(a, b) => a.eval(state)? - b.eval(state)?,
            Expr::Mul(a, b) => a.eval(state)? * b.eval(state)?,
            Expr::Abs(e) => e.eval(state)?.abs(),
        })
    }

    fn max_component(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var { index, .. } => Some(*index),
            Expr::Neg(e) | Expr::Abs(e) => e.max_component(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                match (a.max_component(), b.max_component()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, None) => x,
                    (None, y) => y,
                }
            }
        }
    }
}

/// Closed time interval `[start, end]` in seconds, `0 <= start <= end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self, StlError> {
        if !(start.is_finite() && end.is_finite()) || start < 0.0 || end < start {
            return Err(StlError::BadInterval { a: start, b: end });
        }
        Ok(Self { start, end })
    }
}

/// An STL formula. Predicates are normalized to `expr > 0`; the parser
/// rewrites every comparison into that form.
#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    /// `expr > 0`, robustness `expr(s(t))`.
    Pred(Expr),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Until(Interval, Box<Formula>, Box<Formula>),
    Eventually(Interval, Box<Formula>),
    Always(Interval, Box<Formula>),
}

impl Formula {
    pub fn pred(expr: Expr) -> Self {
        Formula::Pred(expr)
    }

    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn until(iv: Interval, a: Formula, b: Formula) -> Self {
        Formula::Until(iv, Box::new(a), Box::new(b))
    }

    pub fn eventually(iv: Interval, f: Formula) -> Self {
        Formula::Eventually(iv, Box::new(f))
    }

    pub fn always(iv: Interval, f: Formula) -> Self {
        Formula::Always(iv, Box::new(f))
    }

    /// Minimum trace duration (seconds past the evaluation time) needed so
    /// that every nested interval is fully sampled.
    pub fn horizon(&self) -> f64 {
        match self {
            Formula::Pred(_) => 0.0,
            Formula::Not(f) => f.horizon(),
            Formula::And(a, b) | Formula::Or(a, b) => a.horizon().max(b.horizon()),
            Formula::Until(iv, a, b) => iv.end + a.horizon().max(b.horizon()),
            Formula::Eventually(iv, f) | Formula::Always(iv, f) => iv.end + f.horizon(),
        }
    }

    /// Largest state component index referenced by any predicate.
    pub fn max_component(&self) -> Option<usize> {
        match self {
            Formula::Pred(e) => e.max_component(),
            Formula::Not(f) | Formula::Eventually(_, f) | Formula::Always(_, f) => {
                f.max_component()
            }
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Until(_, a, b) => {
                match (a.max_component(), b.max_component()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, None) => x,
                    (None, y) => y,
                }
            }
        }
    }

    /// Quantitative robustness of the formula on `trace` at time `t`.
    ///
    /// `t` must be aligned to the sample grid and `t + horizon` must not
    /// exceed the trace duration.
    pub fn robustness(&self, trace: &Trace, t: f64) -> Result<f64, StlError> {
        let needed = t + self.horizon();
        let have = trace.duration();
        if needed > have + TIME_EPS {
            return Err(StlError::TraceTooShort { t, needed, have });
        }
        self.rob_at(trace, t)
    }

    fn rob_at(&self, trace: &Trace, t: f64) -> Result<f64, StlError> {
        match self {
            Formula::Pred(e) => e.eval(trace.state_at_time(t)),
            Formula::Not(f) => Ok(-f.rob_at(trace, t)?),
            Formula::And(a, b) => Ok(a.rob_at(trace, t)?.min(b.rob_at(trace, t)?)),
            Formula::Or(a, b) => Ok(a.rob_at(trace, t)?.max(b.rob_at(trace, t)?)),
            Formula::Eventually(iv, f) => {
                let mut best = f64::NEG_INFINITY;
                for k in trace.window(t, iv)? {
                    best = best.max(f.rob_at(trace, trace.time_of(k))?);
                }
                Ok(best)
            }
            Formula::Always(iv, f) => {
                let mut worst = f64::INFINITY;
                for k in trace.window(t, iv)? {
                    worst = worst.min(f.rob_at(trace, trace.time_of(k))?);
                }
                Ok(worst)
            }
            Formula::Until(iv, lhs, rhs) => {
                // sup over t1 in [t+a, t+b] of
                //   min( rhs@t1, inf over t2 in [t, t1] of lhs@t2 )
                let window = trace.window(t, iv)?;
                let k_t = trace.index_at_or_after(t);
                let mut best = f64::NEG_INFINITY;
                let mut lhs_prefix = f64::INFINITY;
                let mut next_k2 = k_t;
                for k1 in window {
                    while next_k2 <= k1 {
                        lhs_prefix = lhs_prefix.min(lhs.rob_at(trace, trace.time_of(next_k2))?);
                        next_k2 += 1;
                    }
                    let r = rhs.rob_at(trace, trace.time_of(k1))?.min(lhs_prefix);
                    best = best.max(r);
                }
                Ok(best)
            }
        }
    }

    /// Canonical concrete-syntax rendering. `parse_formula` of the result
    /// (against the same schema) reproduces the AST.
    pub fn print(&self) -> String {
        parser::print_formula(self)
    }
}

/// Fixed-timestep trace of state (and optionally action) vectors produced
/// by closed-loop simulation. Sample `k` represents time `k * dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    dt: f64,
    states: Vec<Vec<f64>>,
    actions: Option<Vec<Vec<f64>>>,
    /// Simulation blew up and the tail was padded with the last finite state.
    pub truncated: bool,
    /// Seed recorded for reproducibility; does not affect the dynamics.
    pub seed: u64,
    /// Deviation parameters the producing system was instantiated with.
    pub deviation: Option<Vec<f64>>,
}

impl Trace {
    /// A trace needs at least one sample and a positive timestep; all state
    /// vectors must share one dimension, likewise all action vectors.
    pub fn new(dt: f64, states: Vec<Vec<f64>>, actions: Option<Vec<Vec<f64>>>) -> Self {
        assert!(dt > 0.0, "trace dt must be positive");
        assert!(!states.is_empty(), "trace needs at least one sample");
        let n = states[0].len();
        assert!(states.iter().all(|s| s.len() == n), "state dims must agree");
        if let Some(acts) = &actions {
            if let Some(first) = acts.first() {
                let m = first.len();
                assert!(acts.iter().all(|a| a.len() == m), "action dims must agree");
            }
        }
        Self { dt, states, actions, truncated: false, seed: 0, deviation: None }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false // length >= 1 by construction
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn actions(&self) -> Option<&[Vec<f64>]> {
        self.actions.as_deref()
    }

    /// Duration in seconds: `(len - 1) * dt`.
    pub fn duration(&self) -> f64 {
        (self.states.len() - 1) as f64 * self.dt
    }

    pub fn time_of(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    fn state_at_time(&self, t: f64) -> &[f64] {
        let k = ((t / self.dt) + 0.5).floor() as usize;
        let k = k.min(self.states.len() - 1);
        &self.states[k]
    }

    /// First sample index at or after time `t` (tolerant comparison).
    fn index_at_or_after(&self, t: f64) -> usize {
        let k = ((t - TIME_EPS) / self.dt).ceil().max(0.0) as usize;
        k.min(self.states.len() - 1)
    }

    /// Sample indices `k` with `a <= k*dt - t <= b`, both ends inclusive
    /// with tolerance.
    fn window(&self, t: f64, iv: &Interval) -> Result<std::ops::RangeInclusive<usize>, StlError> {
        let lo = ((t + iv.start - TIME_EPS) / self.dt).ceil().max(0.0) as usize;
        let hi_f = ((t + iv.end + TIME_EPS) / self.dt).floor();
        let hi = if hi_f < 0.0 { 0 } else { (hi_f as usize).min(self.states.len() - 1) };
        if lo > hi {
            return Err(StlError::EmptyWindow { a: iv.start, b: iv.end, t, dt: self.dt });
        }
        Ok(lo..=hi)
    }
}
