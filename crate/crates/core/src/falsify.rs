//! Tolerance falsification: the lower-layer per-deviation search, the
//! deviation-distance metric, the worst-trajectory similarity heuristic,
//! the two-layer campaign, and the one-layer baseline.
//!
//! The lower layer approximates the system evaluation value
//! `gamma = min robustness over trajectories` by searching the lower-layer
//! variables (initial state plus disturbance control points) with a
//! derivative-free optimizer. A negative `gamma` certifies a violation;
//! a non-negative `gamma` is only budget-relative evidence of tolerance.
//!
//! The upper layer searches the deviation box for violations of minimum
//! normalized distance to the nominal point, scoring each deviation by a
//! penalized objective and optionally by the similarity of its worst-case
//! trajectory to the nominal one.

use crate::control::{ControlError, Policy};
use crate::envs::{EnvError, SystemModel};
use crate::search::{self, OptimizerKind, SearchError};
use crate::seed::{derive_seed, TAG_NOMINAL, TAG_UPPER};
use crate::stl::{Formula, StlError, Trace};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FalsifyError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("budget must be at least 1")]
    BadBudget,
    #[error("traces have different state dimensions ({a} vs {b})")]
    TraceDimMismatch { a: usize, b: usize },
}

/// Norm order for the deviation distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormOrder {
    L1,
    L2,
    LInf,
}

impl Default for NormOrder {
    fn default() -> Self {
        NormOrder::L2
    }
}

/// Normalized distance of a deviation from the nominal point: the chosen
/// norm of the per-dimension values `(d_i - nominal_i) / range_i`.
pub fn deviation_distance(
    delta: &[f64],
    space: &crate::envs::DeviationSpace,
    norm: NormOrder,
) -> Result<f64, FalsifyError> {
    let delta = space.clip(delta)?;
    Ok(match norm {
        NormOrder::L2 => space.normalized_l2(&delta),
        NormOrder::L1 => space.normalized(&delta).iter().map(|z| z.abs()).sum(),
        NormOrder::LInf => space
            .normalized(&delta)
            .iter()
            .map(|z| z.abs())
            .fold(0.0, f64::max),
    })
}

/// Cosine similarity between two traces, flattened to their state
/// sequences in time-major order. The shorter trace is padded with its
/// last state. If both flattened vectors are zero the similarity is 1;
/// if exactly one is zero it is 0.
pub fn trajectory_similarity(a: &Trace, b: &Trace) -> Result<f64, FalsifyError> {
    if a.state_dim() != b.state_dim() {
        return Err(FalsifyError::TraceDimMismatch { a: a.state_dim(), b: b.state_dim() });
    }
    let len = a.len().max(b.len());
    let component = |tr: &Trace, i: usize| -> f64 {
        let k = (i / tr.state_dim()).min(tr.len() - 1);
        tr.states()[k][i % tr.state_dim()]
    };
    let total = len * a.state_dim();
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..total {
        let va = component(a, i);
        let vb = component(b, i);
        dot += va * vb;
        na += va * va;
        nb += vb * vb;
    }
    if na == 0.0 && nb == 0.0 {
        return Ok(1.0);
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Penalty weights for the upper-layer objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    /// Constant penalty added while the deviation is not violating.
    pub p_const: f64,
    /// Weight on the (non-negative) gamma while not violating.
    pub w_gamma: f64,
    /// Heuristic mode only: weight on the worst-trace similarity while not
    /// violating.
    pub w_sim: f64,
}

impl Default for PenaltyParams {
    fn default() -> Self {
        Self { p_const: 1.0, w_gamma: 1.0, w_sim: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveMode {
    Plain,
    Heuristic,
}

/// Upper-layer objective `v = f(delta, gamma)`.
///
/// Violating deviations score their distance alone; non-violating ones add
/// the constant penalty, the weighted gamma, and (heuristic mode) a push
/// away from regions whose worst trace still looks like the nominal one.
pub fn upper_objective(
    distance: f64,
    gamma: f64,
    similarity: f64,
    mode: ObjectiveMode,
    penalty: &PenaltyParams,
) -> f64 {
    if gamma < 0.0 {
        distance
    } else {
        let mut v = distance + penalty.p_const + penalty.w_gamma * gamma;
        if mode == ObjectiveMode::Heuristic {
            v += penalty.w_sim * similarity.max(0.0);
        }
        v
    }
}

/// Result of the lower-layer falsification at one deviation.
#[derive(Debug, Clone)]
pub struct FalsificationOutcome {
    /// Minimum robustness found (the budget-relative approximation of the
    /// system evaluation value).
    pub gamma: f64,
    /// The trace achieving `gamma`.
    pub worst_trace: Trace,
    /// Initial state achieving `gamma`.
    pub init: Vec<f64>,
    /// Disturbance control points achieving `gamma`.
    pub points: Vec<f64>,
    /// Objective evaluations (= simulator calls) consumed.
    pub evals: u64,
    pub seed: u64,
}

/// Re-simulate stored lower-layer variables and return the robustness.
/// This is the replay path: it must reproduce a stored gamma bit-exactly.
pub fn replay_robustness(
    model: &SystemModel,
    policy: &Policy,
    spec: &Formula,
    delta: &[f64],
    init: &[f64],
    points: &[f64],
    seed: u64,
) -> Result<f64, FalsifyError> {
    let mut inst = model.instantiate(delta)?;
    let mut policy = policy.clone();
    let trace = crate::envs::simulate(
        &mut inst,
        &mut policy,
        init,
        points,
        model.horizon_steps,
        seed,
    )?;
    Ok(spec.robustness(&trace, 0.0)?)
}

/// Lower-layer CPS falsification with CMA-ES.
pub fn lower_falsify(
    model: &SystemModel,
    delta: &[f64],
    policy: &Policy,
    spec: &Formula,
    budget: usize,
    seed: u64,
) -> Result<FalsificationOutcome, FalsifyError> {
    lower_falsify_with(OptimizerKind::CmaEs, model, delta, policy, spec, budget, seed)
}

/// Lower-layer CPS falsification: minimize robustness over the box of
/// lower-layer variables (initial state plus disturbance points).
pub fn lower_falsify_with(
    kind: OptimizerKind,
    model: &SystemModel,
    delta: &[f64],
    policy: &Policy,
    spec: &Formula,
    budget: usize,
    seed: u64,
) -> Result<FalsificationOutcome, FalsifyError> {
    if budget == 0 {
        return Err(FalsifyError::BadBudget);
    }
    let delta = model.deviation.clip(delta)?;
    let (lo, hi) = model.lower_layer_bounds();
    let mut policy = policy.clone();
    let mut best: Option<(f64, Trace, Vec<f64>, Vec<f64>)> = None;
    let mut evals: u64 = 0;
    let mut first_err: Option<FalsifyError> = None;
    {
        let objective = |vars: &[f64]| -> f64 {
            let (init, points) = model.split_lower_vars(vars);
            let mut run = || -> Result<(f64, Trace), FalsifyError> {
                let mut inst = model.instantiate(&delta)?;
                let trace = crate::envs::simulate(
                    &mut inst,
                    &mut policy,
                    init,
                    points,
                    model.horizon_steps,
                    seed,
                )?;
                let rho = spec.robustness(&trace, 0.0)?;
                Ok((rho, trace))
            };
            match run() {
                Ok((rho, trace)) => {
                    evals += 1;
                    let better = match &best {
                        Some((b, ..)) => rho < *b,
                        None => true,
                    };
                    if better {
                        best = Some((rho, trace, init.to_vec(), points.to_vec()));
                    }
                    rho
                }
                Err(e) => {
                    if first_err.is_none() {
                        first_err = Some(e);
                    }
                    f64::INFINITY
                }
            }
        };
        search::minimize(objective, kind, &lo, &hi, None, None, budget, seed)?;
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    let (gamma, worst_trace, init, points) =
        best.expect("budget >= 1 yields at least one evaluation");
    Ok(FalsificationOutcome { gamma, worst_trace, init, points, evals, seed })
}

/// Lower-layer witness stored with each record; enough to replay the
/// record's gamma exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub init: Vec<f64>,
    pub points: Vec<f64>,
    pub seed: u64,
}

/// One evaluated deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationRecord {
    /// Upper-layer generation (two-layer) or optimizer generation
    /// (one-layer baseline).
    pub iteration: usize,
    /// Candidate index within the iteration.
    pub index: usize,
    pub delta: Vec<f64>,
    /// Two-layer: lower-layer minimum robustness. One-layer: robustness of
    /// this single trajectory.
    pub gamma: f64,
    pub distance: f64,
    /// Cosine similarity of the worst trace to the nominal worst trace;
    /// absent in the one-layer baseline.
    pub similarity: Option<f64>,
    /// The objective value the optimizer saw.
    pub objective: f64,
    pub violating: bool,
    /// Simulator calls spent on this record.
    pub lower_evals: u64,
    pub witness: Witness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestViolation {
    pub record_index: usize,
    pub delta: Vec<f64>,
    pub distance: f64,
    pub gamma: f64,
}

/// Full campaign result: every record, the minimum-distance violation, and
/// the Table-1 style totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub system: String,
    pub mode: String,
    pub seed: u64,
    pub upper_iterations: usize,
    pub lambda: usize,
    pub lower_budget: usize,
    /// Gamma of the dedicated nominal lower-layer run (two-layer only).
    pub nominal_gamma: Option<f64>,
    pub records: Vec<DeviationRecord>,
    pub best: Option<BestViolation>,
    pub violation_count: usize,
    pub min_distance: Option<f64>,
    pub avg_distance: Option<f64>,
    /// Simulator calls measured on the model's counter.
    pub sims_used: u64,
    /// Simulator calls accounted by the records (plus the nominal run).
    pub declared_sims: u64,
}

impl CampaignReport {
    fn finalize(&mut self) {
        let violations: Vec<&DeviationRecord> =
            self.records.iter().filter(|r| r.violating).collect();
        self.violation_count = violations.len();
        if violations.is_empty() {
            self.min_distance = None;
            self.avg_distance = None;
            self.best = None;
            return;
        }
        let mut best_idx = 0usize;
        let mut best_dist = f64::INFINITY;
        for (i, r) in self.records.iter().enumerate() {
            if r.violating && r.distance < best_dist {
                best_dist = r.distance;
                best_idx = i;
            }
        }
        let sum: f64 = violations.iter().map(|r| r.distance).sum();
        self.min_distance = Some(best_dist);
        self.avg_distance = Some(sum / violations.len() as f64);
        let b = &self.records[best_idx];
        self.best = Some(BestViolation {
            record_index: best_idx,
            delta: b.delta.clone(),
            distance: b.distance,
            gamma: b.gamma,
        });
    }
}

/// Two-layer campaign configuration. `lambda = None` uses the CMA-ES
/// default population for the deviation dimension; `upper_iterations`
/// counts upper-layer generations, so the upper budget in candidate
/// evaluations is `upper_iterations * lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub upper_iterations: usize,
    pub lambda: Option<usize>,
    pub lower_budget: usize,
    pub mode: ObjectiveMode,
    pub upper_kind: OptimizerKind,
    pub lower_kind: OptimizerKind,
    pub penalty: PenaltyParams,
    pub norm: NormOrder,
    pub seed: u64,
}

impl CampaignConfig {
    /// Paper-scale defaults: at most 100 upper-layer candidate evaluations
    /// and 100 lower-layer simulations per candidate.
    pub fn default_for(deviation_dim: usize, seed: u64) -> Self {
        let lambda = search::default_lambda(deviation_dim);
        Self {
            upper_iterations: 100 / lambda,
            lambda: None,
            lower_budget: 100,
            mode: ObjectiveMode::Plain,
            upper_kind: OptimizerKind::CmaEs,
            lower_kind: OptimizerKind::CmaEs,
            penalty: PenaltyParams::default(),
            norm: NormOrder::default(),
            seed,
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self.mode {
            ObjectiveMode::Plain => "two-layer-plain",
            ObjectiveMode::Heuristic => "two-layer-heuristic",
        }
    }
}

/// The two-layer tolerance falsification campaign.
///
/// First runs the lower layer at the nominal point (the heuristic's
/// reference worst trace), then iterates the upper-layer optimizer over
/// the deviation box, scoring each candidate with a full lower-layer
/// search. Terminates on budget exhaustion.
pub fn falsify_tolerance(
    model: &SystemModel,
    policy: &Policy,
    spec: &Formula,
    config: &CampaignConfig,
) -> Result<CampaignReport, FalsifyError> {
    let sims_before = model.sim_calls();
    let space = &model.deviation;
    let lambda = config.lambda.unwrap_or_else(|| search::default_lambda(space.dim()));

    let nominal = lower_falsify_with(
        config.lower_kind,
        model,
        &space.nominal,
        policy,
        spec,
        config.lower_budget,
        derive_seed(config.seed, &[TAG_NOMINAL]),
    )?;

    let mut opt = search::Optimizer::new(
        config.upper_kind,
        &space.lower,
        &space.upper,
        Some(lambda),
        Some(&space.nominal),
        None,
        derive_seed(config.seed, &[TAG_UPPER]),
    )?;

    let mut records = Vec::with_capacity(config.upper_iterations * lambda);
    let mut declared = nominal.evals;
    for iteration in 0..config.upper_iterations {
        let candidates = opt.ask();
        let mut values = Vec::with_capacity(candidates.len());
        for (index, delta) in candidates.iter().enumerate() {
            let lseed = derive_seed(config.seed, &[iteration as u64, index as u64]);
            let outcome = lower_falsify_with(
                config.lower_kind,
                model,
                delta,
                policy,
                spec,
                config.lower_budget,
                lseed,
            )?;
            let distance = deviation_distance(delta, space, config.norm)?;
            let similarity = trajectory_similarity(&outcome.worst_trace, &nominal.worst_trace)?;
            let objective =
                upper_objective(distance, outcome.gamma, similarity, config.mode, &config.penalty);
            declared += outcome.evals;
            values.push(objective);
            records.push(DeviationRecord {
                iteration,
                index,
                delta: delta.clone(),
                gamma: outcome.gamma,
                distance,
                similarity: Some(similarity),
                objective,
                violating: outcome.gamma < 0.0,
                lower_evals: outcome.evals,
                witness: Witness {
                    init: outcome.init,
                    points: outcome.points,
                    seed: outcome.seed,
                },
            });
        }
        opt.tell(&candidates, &values)?;
    }

    let mut report = CampaignReport {
        system: model.id.name().to_string(),
        mode: config.mode_name().to_string(),
        seed: config.seed,
        upper_iterations: config.upper_iterations,
        lambda,
        lower_budget: config.lower_budget,
        nominal_gamma: Some(nominal.gamma),
        records,
        best: None,
        violation_count: 0,
        min_distance: None,
        avg_distance: None,
        sims_used: model.sim_calls() - sims_before,
        declared_sims: declared,
    };
    report.finalize();
    Ok(report)
}

/// One-layer baseline configuration: a single optimizer over the joint
/// deviation-plus-lower-variable space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneLayerConfig {
    /// Total simulation budget (the paper's baseline uses 10,000).
    pub budget: usize,
    pub lambda: Option<usize>,
    pub kind: OptimizerKind,
    pub norm: NormOrder,
    pub seed: u64,
}

impl OneLayerConfig {
    pub fn default_with(seed: u64) -> Self {
        Self {
            budget: 10_000,
            lambda: None,
            kind: OptimizerKind::CmaEs,
            norm: NormOrder::default(),
            seed,
        }
    }
}

/// One-layer baseline: minimize `robustness + distance` over the joint
/// space, recording every evaluation as a deviation record.
pub fn one_layer_falsify(
    model: &SystemModel,
    policy: &Policy,
    spec: &Formula,
    config: &OneLayerConfig,
) -> Result<CampaignReport, FalsifyError> {
    let sims_before = model.sim_calls();
    let space = &model.deviation;
    let k = space.dim();
    let (llo, lhi) = model.lower_layer_bounds();
    let mut lo = space.lower.clone();
    let mut hi = space.upper.clone();
    lo.extend_from_slice(&llo);
    hi.extend_from_slice(&lhi);
    let lambda = config.lambda.unwrap_or_else(|| search::default_lambda(lo.len()));
    // Start the deviation part at the nominal point, the trajectory
    // variables at the box center.
    let mut mean = space.nominal.clone();
    mean.extend(llo.iter().zip(&lhi).map(|(l, h)| 0.5 * (l + h)));

    let mut opt = search::Optimizer::new(
        config.kind,
        &lo,
        &hi,
        Some(lambda),
        Some(&mean),
        None,
        derive_seed(config.seed, &[TAG_UPPER]),
    )?;
    let mut policy = policy.clone();
    let mut records = Vec::with_capacity(config.budget);
    let mut remaining = config.budget;
    let mut iteration = 0usize;
    while remaining > 0 {
        let candidates = opt.ask();
        let take = candidates.len().min(remaining);
        let mut values = Vec::with_capacity(candidates.len());
        for (index, joint) in candidates.iter().take(take).enumerate() {
            let delta = &joint[..k];
            let (init, points) = model.split_lower_vars(&joint[k..]);
            let seed = derive_seed(config.seed, &[iteration as u64, index as u64]);
            let mut inst = model.instantiate(delta)?;
            let trace = crate::envs::simulate(
                &mut inst,
                &mut policy,
                init,
                points,
                model.horizon_steps,
                seed,
            )?;
            let rho = spec.robustness(&trace, 0.0)?;
            let distance = deviation_distance(delta, space, config.norm)?;
            // The baseline appends the distance directly to the robustness.
            let objective = rho + distance;
            values.push(objective);
            records.push(DeviationRecord {
                iteration,
                index,
                delta: delta.to_vec(),
                gamma: rho,
                distance,
                similarity: None,
                objective,
                violating: rho < 0.0,
                lower_evals: 1,
                witness: Witness { init: init.to_vec(), points: points.to_vec(), seed },
            });
        }
        remaining -= take;
        if take == candidates.len() {
            opt.tell(&candidates, &values)?;
        }
        iteration += 1;
    }

    let mut report = CampaignReport {
        system: model.id.name().to_string(),
        mode: "one-layer".to_string(),
        seed: config.seed,
        upper_iterations: iteration,
        lambda,
        lower_budget: 1,
        nominal_gamma: None,
        records,
        best: None,
        violation_count: 0,
        min_distance: None,
        avg_distance: None,
        sims_used: model.sim_calls() - sims_before,
        declared_sims: config.budget as u64,
    };
    report.declared_sims = report.records.len() as u64;
    report.finalize();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{registry, SystemId};

    fn disk() -> (SystemModel, Policy, Formula) {
        let (model, policy) = registry::build(SystemId::SyntheticDisk).unwrap();
        let spec = model.spec_formula().unwrap();
        (model, policy, spec)
    }

    #[test]
    fn disk_gamma_at_nominal_is_the_margin() {
        let (model, policy, spec) = disk();
        let out = lower_falsify(&model, &[0.0, 0.0], &policy, &spec, 1, 7).unwrap();
        assert_eq!(out.gamma, 0.4);
        assert_eq!(out.evals, 1);
    }

    #[test]
    fn disk_gamma_tracks_distance_exactly() {
        let (model, policy, spec) = disk();
        // Normalized distance 0.6 -> gamma = 0.4 - 0.6 = -0.2.
        let d = 0.6f64 / (2.0f64).sqrt();
        let delta = [2.0 * d, 2.0 * d];
        let out = lower_falsify(&model, &delta, &policy, &spec, 3, 7).unwrap();
        let dist = deviation_distance(&delta, &model.deviation, NormOrder::L2).unwrap();
        assert_eq!(out.gamma, 0.4 - dist);
        assert!((out.gamma - (-0.2)).abs() < 1e-12);
    }

    #[test]
    fn carrun_near_nominal_is_safe_with_small_budget() {
        let (model, policy) = registry::build(SystemId::Carrun).unwrap();
        let spec = model.spec_formula().unwrap();
        let delta = [20.5, 0.51];
        let out = lower_falsify(&model, &delta, &policy, &spec, 100, 3).unwrap();
        assert!(out.gamma > 0.0, "near-nominal carrun fell over: gamma {}", out.gamma);
    }

    #[test]
    fn distance_examples() {
        let (model, ..) = disk();
        let space = &model.deviation;
        assert_eq!(deviation_distance(&[0.0, 0.0], space, NormOrder::L2).unwrap(), 0.0);
        // One dimension displaced by its full range: distance 1.0. The box
        // is [-1,1]^2 so a full-range displacement leaves the box; check on
        // a space whose nominal sits at a corner-adjacent position instead.
        let space2 = crate::envs::DeviationSpace::new(
            vec!["a".into(), "b".into()],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![0.5, 0.5],
        )
        .unwrap();
        let d = deviation_distance(&[1.0, 0.5], &space2, NormOrder::L2).unwrap();
        assert_eq!(d, 0.5); // half range in one dim
        let d1 = deviation_distance(&[1.0, 0.0], &space2, NormOrder::L1).unwrap();
        assert!((d1 - 1.0).abs() < 1e-12);
        let dinf = deviation_distance(&[1.0, 0.0], &space2, NormOrder::LInf).unwrap();
        assert_eq!(dinf, 0.5);
    }

    #[test]
    fn similarity_examples() {
        let tr = |vals: &[(f64, f64)]| {
            Trace::new(1.0, vals.iter().map(|&(a, b)| vec![a, b]).collect(), None)
        };
        let a = tr(&[(1.0, 0.0), (0.5, 0.5)]);
        assert_eq!(trajectory_similarity(&a, &a).unwrap(), 1.0);
        let neg = tr(&[(-1.0, 0.0), (-0.5, -0.5)]);
        assert!((trajectory_similarity(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        let orth_a = tr(&[(1.0, 0.0)]);
        let orth_b = tr(&[(0.0, 1.0)]);
        assert_eq!(trajectory_similarity(&orth_a, &orth_b).unwrap(), 0.0);
        // Zero-norm conventions.
        let z = tr(&[(0.0, 0.0)]);
        assert_eq!(trajectory_similarity(&z, &z).unwrap(), 1.0);
        assert_eq!(trajectory_similarity(&z, &a).unwrap(), 0.0);
    }

    #[test]
    fn similarity_matches_direct_dot_product() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.gen_range(1..4usize);
            let la = rng.gen_range(1..8usize);
            let lb = rng.gen_range(1..8usize);
            let mk = |rng: &mut rand_chacha::ChaCha8Rng, l: usize, n: usize| {
                Trace::new(
                    0.5,
                    (0..l)
                        .map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
                        .collect(),
                    None,
                )
            };
            let a = mk(&mut rng, la, n);
            let b = mk(&mut rng, lb, n);
            let got = trajectory_similarity(&a, &b).unwrap();
            // Direct computation with explicit padding.
            let len = la.max(lb);
            let flat = |t: &Trace| -> Vec<f64> {
                (0..len)
                    .flat_map(|k| t.states()[k.min(t.len() - 1)].clone())
                    .collect()
            };
            let fa = flat(&a);
            let fb = flat(&b);
            let dot: f64 = fa.iter().zip(&fb).map(|(x, y)| x * y).sum();
            let na: f64 = fa.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = fb.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((got - dot / (na * nb)).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_arithmetic() {
        let p = PenaltyParams::default();
        // Violating: distance alone, in either mode.
        assert_eq!(upper_objective(0.3, -0.1, 0.9, ObjectiveMode::Plain, &p), 0.3);
        assert_eq!(upper_objective(0.3, -0.1, 0.9, ObjectiveMode::Heuristic, &p), 0.3);
        // Non-violating, plain: 0.3 + 1 + 0.2 = 1.5.
        assert!((upper_objective(0.3, 0.2, 0.9, ObjectiveMode::Plain, &p) - 1.5).abs() < 1e-12);
        // Heuristic adds w_sim * max(sim, 0): + 0.45.
        assert!(
            (upper_objective(0.3, 0.2, 0.9, ObjectiveMode::Heuristic, &p) - 1.95).abs() < 1e-12
        );
        // Negative similarity adds nothing.
        assert!(
            (upper_objective(0.3, 0.2, -0.5, ObjectiveMode::Heuristic, &p) - 1.5).abs() < 1e-12
        );
    }

    #[test]
    fn disk_campaign_converges_to_the_boundary() {
        let (model, policy, spec) = disk();
        let mut config = CampaignConfig::default_for(2, 41);
        config.upper_iterations = 50;
        config.lower_budget = 1;
        let report = falsify_tolerance(&model, &policy, &spec, &config).unwrap();
        assert!(report.violation_count > 0, "no violations found");
        let best = report.min_distance.unwrap();
        assert!(
            (0.4..=0.46).contains(&best),
            "best violating distance {best} not within [0.4, 0.46]"
        );
        // Every violating record on the synthetic disk has distance > 0.4.
        for r in report.records.iter().filter(|r| r.violating) {
            assert!(r.distance > 0.4);
        }
    }

    #[test]
    fn zero_upper_budget_runs_only_the_nominal_probe() {
        let (model, policy, spec) = disk();
        let mut config = CampaignConfig::default_for(2, 1);
        config.upper_iterations = 0;
        config.lower_budget = 1;
        let before = model.sim_calls();
        let report = falsify_tolerance(&model, &policy, &spec, &config).unwrap();
        assert!(report.records.is_empty());
        assert!(report.best.is_none());
        assert_eq!(model.sim_calls() - before, 1); // just the nominal run
        assert_eq!(report.sims_used, 1);
        assert_eq!(report.declared_sims, 1);
    }

    #[test]
    fn campaigns_are_seed_deterministic() {
        let (model, policy, spec) = disk();
        let mut config = CampaignConfig::default_for(2, 99);
        config.upper_iterations = 10;
        config.lower_budget = 1;
        let a = falsify_tolerance(&model, &policy, &spec, &config).unwrap();
        let b = falsify_tolerance(&model, &policy, &spec, &config).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.best, b.best);
        config.seed = 100;
        let c = falsify_tolerance(&model, &policy, &spec, &config).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn budget_accounting_matches_counter() {
        let (model, policy, spec) = disk();
        let mut config = CampaignConfig::default_for(2, 3);
        config.upper_iterations = 5;
        config.lower_budget = 4;
        let report = falsify_tolerance(&model, &policy, &spec, &config).unwrap();
        assert_eq!(report.sims_used, report.declared_sims);
        let expected = (5 * report.lambda * 4 + 4) as u64;
        assert_eq!(report.sims_used, expected);
    }

    #[test]
    fn violating_records_replay_bit_exactly() {
        let (model, policy, spec) = disk();
        let mut config = CampaignConfig::default_for(2, 17);
        config.upper_iterations = 20;
        config.lower_budget = 2;
        let report = falsify_tolerance(&model, &policy, &spec, &config).unwrap();
        assert!(report.violation_count > 0);
        for r in report.records.iter().filter(|r| r.violating) {
            let rho = replay_robustness(
                &model,
                &policy,
                &spec,
                &r.delta,
                &r.witness.init,
                &r.witness.points,
                r.witness.seed,
            )
            .unwrap();
            assert_eq!(rho.to_bits(), r.gamma.to_bits(), "replay drifted");
            assert!(rho < 0.0);
        }
    }

    #[test]
    fn best_violation_minimizes_distance() {
        let (model, policy, spec) = disk();
        let mut config = CampaignConfig::default_for(2, 29);
        config.upper_iterations = 15;
        config.lower_budget = 1;
        let report = falsify_tolerance(&model, &policy, &spec, &config).unwrap();
        let best = report.best.as_ref().unwrap();
        for r in report.records.iter().filter(|r| r.violating) {
            assert!(best.distance <= r.distance);
        }
        assert_eq!(report.min_distance.unwrap(), best.distance);
        // min <= avg
        assert!(report.min_distance.unwrap() <= report.avg_distance.unwrap());
    }

    #[test]
    fn heuristic_agrees_with_plain_on_violations() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let p = PenaltyParams::default();
        for _ in 0..1000 {
            let dist = rng.gen_range(0.0..2.0);
            let gamma = rng.gen_range(-1.0..0.0f64);
            let sim = rng.gen_range(-1.0..1.0);
            let a = upper_objective(dist, gamma, sim, ObjectiveMode::Plain, &p);
            let b = upper_objective(dist, gamma, sim, ObjectiveMode::Heuristic, &p);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn one_layer_zero_budget_is_empty() {
        let (model, policy, spec) = disk();
        let mut config = OneLayerConfig::default_with(5);
        config.budget = 0;
        let before = model.sim_calls();
        let report = one_layer_falsify(&model, &policy, &spec, &config).unwrap();
        assert!(report.records.is_empty());
        assert_eq!(model.sim_calls(), before);
    }

    #[test]
    fn one_layer_is_deterministic_and_budgeted() {
        let (model, policy, spec) = disk();
        let mut config = OneLayerConfig::default_with(5);
        config.budget = 200;
        let before = model.sim_calls();
        let a = one_layer_falsify(&model, &policy, &spec, &config).unwrap();
        assert_eq!(model.sim_calls() - before, 200);
        assert_eq!(a.records.len(), 200);
        assert_eq!(a.sims_used, 200);
        assert_eq!(a.declared_sims, 200);
        let b = one_layer_falsify(&model, &policy, &spec, &config).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn distance_properties_hold() {
        use rand::{Rng, SeedableRng};
        let space = crate::envs::DeviationSpace::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![-2.0, 0.0, 10.0],
            vec![2.0, 1.0, 30.0],
            vec![0.0, 0.5, 20.0],
        )
        .unwrap();
        assert_eq!(
            deviation_distance(&space.nominal.clone(), &space, NormOrder::L2).unwrap(),
            0.0
        );
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let delta: Vec<f64> = (0..3)
                .map(|i| rng.gen_range(space.lower[i]..=space.upper[i]))
                .collect();
            let d = deviation_distance(&delta, &space, NormOrder::L2).unwrap();
            // Reflection about the nominal point gives the same distance
            // (where the reflection stays in the box).
            let reflected: Vec<f64> = delta
                .iter()
                .zip(&space.nominal)
                .map(|(v, n)| 2.0 * n - v)
                .collect();
            let inside = reflected
                .iter()
                .enumerate()
                .all(|(i, v)| *v >= space.lower[i] && *v <= space.upper[i]);
            if inside {
                let dr = deviation_distance(&reflected, &space, NormOrder::L2).unwrap();
                assert!((d - dr).abs() < 1e-12);
            }
            // Scaling along one dimension from nominal is linear.
            let mut single = space.nominal.clone();
            let t = rng.gen_range(0.0..1.0);
            single[0] = space.nominal[0] + t * (space.upper[0] - space.nominal[0]);
            let d1 = deviation_distance(&single, &space, NormOrder::L2).unwrap();
            let mut half = space.nominal.clone();
            half[0] = space.nominal[0] + 0.5 * t * (space.upper[0] - space.nominal[0]);
            let dh = deviation_distance(&half, &space, NormOrder::L2).unwrap();
            assert!((d1 - 2.0 * dh).abs() < 1e-12);
        }
    }
}
