//! Test support: an independently written reference evaluator for STL
//! robustness plus random formula/trace generators.
//!
//! The reference evaluator is deliberately naive: it walks sample times
//! directly from the semantics definitions, recomputing inner infima from
//! scratch, and shares no windowing or indexing code with the production
//! evaluator. Feature-gated; only test targets compile it.

use crate::stl::{Expr, Formula, Interval, Trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-9;

fn sample_times(trace: &Trace) -> Vec<f64> {
    (0..trace.len()).map(|k| k as f64 * trace.dt()).collect()
}

fn state_at(trace: &Trace, t: f64) -> &[f64] {
    let mut best = 0usize;
    let mut best_err = f64::INFINITY;
    for k in 0..trace.len() {
        let err = (k as f64 * trace.dt() - t).abs();
        if err < best_err {
            best_err = err;
            best = k;
        }
    }
    &trace.states()[best]
}

fn eval_expr(e: &Expr, state: &[f64]) -> f64 {
    match e {
        Expr::Const(c) => *c,
        Expr::Var { index, .. } => state[*index],
        Expr::Neg(inner) => -eval_expr(inner, state),
        Expr::Add(a, b) => eval_expr(a, state) + eval_expr(b, state),
        Expr::Sub(a, b) => eval_expr(a, state) - eval_expr(b, state),
        Expr::Mul(a, b) => eval_expr(a, state) * eval_expr(b, state),
        Expr::Abs(inner) => eval_expr(inner, state).abs(),
    }
}

/// Reference robustness: a direct transcription of the quantitative
/// semantics with max/min over sample times.
pub fn naive_robustness(f: &Formula, trace: &Trace, t: f64) -> f64 {
    match f {
        Formula::Pred(e) => eval_expr(e, state_at(trace, t)),
        Formula::Not(g) => -naive_robustness(g, trace, t),
        Formula::And(a, b) => {
            naive_robustness(a, trace, t).min(naive_robustness(b, trace, t))
        }
        Formula::Or(a, b) => {
            naive_robustness(a, trace, t).max(naive_robustness(b, trace, t))
        }
        Formula::Eventually(iv, g) => {
            let mut best = f64::NEG_INFINITY;
            for t1 in sample_times(trace) {
                if t1 >= t + iv.start - EPS && t1 <= t + iv.end + EPS {
                    best = best.max(naive_robustness(g, trace, t1));
                }
            }
            best
        }
        Formula::Always(iv, g) => {
            let mut worst = f64::INFINITY;
            for t1 in sample_times(trace) {
                if t1 >= t + iv.start - EPS && t1 <= t + iv.end + EPS {
                    worst = worst.min(naive_robustness(g, trace, t1));
                }
            }
            worst
        }
        Formula::Until(iv, p, q) => {
            let times = sample_times(trace);
            let mut sup = f64::NEG_INFINITY;
            for &t1 in &times {
                if t1 < t + iv.start - EPS || t1 > t + iv.end + EPS {
                    continue;
                }
                let mut inf = f64::INFINITY;
                for &t2 in &times {
                    if t2 >= t - EPS && t2 <= t1 + EPS {
                        inf = inf.min(naive_robustness(p, trace, t2));
                    }
                }
                sup = sup.max(naive_robustness(q, trace, t1).min(inf));
            }
            sup
        }
    }
}

/// Controls random formula generation.
#[derive(Debug, Clone, Copy)]
pub struct FormulaGen {
    pub dims: usize,
    pub dt: f64,
    pub max_depth: usize,
    /// Upper bound, in samples, for each temporal interval.
    pub max_interval_samples: usize,
    /// Total horizon budget in samples; nested intervals stay within it.
    pub horizon_budget: usize,
}

impl FormulaGen {
    pub fn standard(dims: usize, dt: f64, trace_len: usize) -> Self {
        Self {
            dims,
            dt,
            max_depth: 4,
            max_interval_samples: 10,
            horizon_budget: trace_len.saturating_sub(1),
        }
    }
}

fn random_expr(rng: &mut ChaCha8Rng, dims: usize, depth: usize) -> Expr {
    let var = |rng: &mut ChaCha8Rng| {
        let index = rng.gen_range(0..dims);
        Expr::Var { name: format!("s{index}"), index }
    };
    if depth == 0 {
        return if rng.gen_bool(0.7) {
            var(rng)
        } else {
            Expr::Const((rng.gen_range(-40..=40) as f64) / 10.0)
        };
    }
    match rng.gen_range(0..6) {
        0 => var(rng),
        1 => Expr::Const((rng.gen_range(-40..=40) as f64) / 10.0),
        2 => Expr::Sub(
            Box::new(random_expr(rng, dims, depth - 1)),
            Box::new(random_expr(rng, dims, depth - 1)),
        ),
        3 => Expr::Add(
            Box::new(random_expr(rng, dims, depth - 1)),
            Box::new(random_expr(rng, dims, depth - 1)),
        ),
        4 => Expr::Abs(Box::new(random_expr(rng, dims, depth - 1))),
        _ => Expr::Mul(
            Box::new(Expr::Const((rng.gen_range(-20..=20) as f64) / 10.0)),
            Box::new(var(rng)),
        ),
    }
}

fn gen_formula(rng: &mut ChaCha8Rng, cfg: &FormulaGen, depth: usize, budget: usize) -> Formula {
    let leaf = depth == 0 || rng.gen_bool(0.3);
    if leaf {
        return Formula::pred(random_expr(rng, cfg.dims, 2));
    }
    let temporal_ok = budget > 0;
    let choice = rng.gen_range(0..if temporal_ok { 6 } else { 3 });
    match choice {
        0 => Formula::not(gen_formula(rng, cfg, depth - 1, budget)),
        1 => Formula::and(
            gen_formula(rng, cfg, depth - 1, budget),
            gen_formula(rng, cfg, depth - 1, budget),
        ),
        2 => Formula::or(
            gen_formula(rng, cfg, depth - 1, budget),
            gen_formula(rng, cfg, depth - 1, budget),
        ),
        _ => {
            let hi = budget.min(cfg.max_interval_samples);
            let kb = rng.gen_range(1..=hi);
            let ka = rng.gen_range(0..=kb);
            let iv = Interval::new(ka as f64 * cfg.dt, kb as f64 * cfg.dt).unwrap();
            let child_budget = budget - kb;
            match choice {
                3 => Formula::eventually(iv, gen_formula(rng, cfg, depth - 1, child_budget)),
                4 => Formula::always(iv, gen_formula(rng, cfg, depth - 1, child_budget)),
                _ => Formula::until(
                    iv,
                    gen_formula(rng, cfg, depth - 1, child_budget),
                    gen_formula(rng, cfg, depth - 1, child_budget),
                ),
            }
        }
    }
}

/// Random formula whose horizon fits the configured budget: evaluable at
/// t = 0 on any trace of at least `horizon_budget + 1` samples.
pub fn random_formula(seed: u64, cfg: &FormulaGen) -> Formula {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = gen_formula(&mut rng, cfg, cfg.max_depth, cfg.horizon_budget);
    debug_assert!(f.horizon() <= cfg.horizon_budget as f64 * cfg.dt + 1e-9);
    f
}

/// Random trace of `len` samples with values in [-5, 5].
pub fn random_trace(seed: u64, dims: usize, len: usize, dt: f64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15));
    let states = (0..len)
        .map(|_| (0..dims).map(|_| rng.gen_range(-5.0..5.0)).collect())
        .collect();
    Trace::new(dt, states, None)
}

/// Negation-free formula whose predicates are all `component - k > 0`;
/// shifting every signal component up by `c` raises its robustness by
/// exactly `c`.
pub fn random_shift_formula(seed: u64, cfg: &FormulaGen) -> Formula {
    fn gen(rng: &mut ChaCha8Rng, cfg: &FormulaGen, depth: usize, budget: usize) -> Formula {
        let leaf = depth == 0 || rng.gen_bool(0.35);
        if leaf {
            let index = rng.gen_range(0..cfg.dims);
            return Formula::pred(Expr::Sub(
                Box::new(Expr::Var { name: format!("s{index}"), index }),
                Box::new(Expr::Const((rng.gen_range(-30..=30) as f64) / 10.0)),
            ));
        }
        let temporal_ok = budget > 0;
        let choice = rng.gen_range(0..if temporal_ok { 4 } else { 2 });
        match choice {
            0 => Formula::and(
                gen(rng, cfg, depth - 1, budget),
                gen(rng, cfg, depth - 1, budget),
            ),
            1 => Formula::or(
                gen(rng, cfg, depth - 1, budget),
                gen(rng, cfg, depth - 1, budget),
            ),
            _ => {
                let hi = budget.min(cfg.max_interval_samples);
                let kb = rng.gen_range(1..=hi);
                let ka = rng.gen_range(0..=kb);
                let iv = Interval::new(ka as f64 * cfg.dt, kb as f64 * cfg.dt).unwrap();
                if choice == 2 {
                    Formula::eventually(iv, gen(rng, cfg, depth - 1, budget - kb))
                } else {
                    Formula::always(iv, gen(rng, cfg, depth - 1, budget - kb))
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gen(&mut rng, cfg, cfg.max_depth, cfg.horizon_budget)
}

/// Shift every state component of a trace up by `c`.
pub fn shift_trace(trace: &Trace, c: f64) -> Trace {
    let states = trace
        .states()
        .iter()
        .map(|s| s.iter().map(|v| v + c).collect())
        .collect();
    Trace::new(trace.dt(), states, None)
}
