//! Bounded-box derivative-free optimizers with an ask/tell interface.
//!
//! Two backends: CMA-ES (the workhorse) and uniform random sampling (the
//! baseline). Both operate internally on coordinates normalized to
//! `[0,1]^k`; callers see points in the original box. Candidates outside
//! the box are resampled up to 10 times, then clipped.
//!
//! The CMA-ES update follows Hansen's tutorial parameterization: rank-based
//! recombination with logarithmic weights, cumulative step-size adaptation,
//! and rank-1 plus rank-mu covariance updates.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("bounds must satisfy lower <= upper in every dimension")]
    BadBounds,
    #[error("initial mean must lie within the bounds")]
    MeanOutOfBounds,
    #[error("tell expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("tell called without a preceding ask")]
    TellWithoutAsk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    CmaEs,
    Random,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OptimizerKind::CmaEs => write!(f, "cmaes"),
            OptimizerKind::Random => write!(f, "random"),
        }
    }
}

/// Default population size, `4 + floor(3 ln k)`.
pub fn default_lambda(dim: usize) -> usize {
    4 + (3.0 * (dim.max(1) as f64).ln()).floor() as usize
}

const RESAMPLE_LIMIT: usize = 10;
const EIGEN_FLOOR: f64 = 1e-12;
const SIGMA0: f64 = 0.2; // of the per-dimension range, i.e. 0.2 in [0,1] coords

struct CmaState {
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    // Decomposition of cov, refreshed after each tell.
    eigvecs: DMatrix<f64>,
    eigvals_sqrt: DVector<f64>,
    path_sigma: DVector<f64>,
    path_cov: DVector<f64>,
    generation: usize,
    // Strategy constants.
    weights: Vec<f64>,
    mu: usize,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
}

impl CmaState {
    fn new(dim: usize, lambda: usize, mean: DVector<f64>, sigma: f64) -> Self {
        let k = dim as f64;
        let mu = lambda / 2;
        let mut weights: Vec<f64> = (0..mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - ((i + 1) as f64).ln())
            .collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (k + mu_eff + 5.0);
        let d_sigma =
            1.0 + 2.0 * (((mu_eff - 1.0) / (k + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / k) / (k + 4.0 + 2.0 * mu_eff / k);
        let c_1 = 2.0 / ((k + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1)
            .min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((k + 2.0).powi(2) + mu_eff));
        let chi_n = k.sqrt() * (1.0 - 1.0 / (4.0 * k) + 1.0 / (21.0 * k * k));
        Self {
            mean,
            sigma,
            cov: DMatrix::identity(dim, dim),
            eigvecs: DMatrix::identity(dim, dim),
            eigvals_sqrt: DVector::from_element(dim, 1.0),
            path_sigma: DVector::zeros(dim),
            path_cov: DVector::zeros(dim),
            generation: 0,
            weights,
            mu,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        }
    }

    fn refresh_decomposition(&mut self) {
        // Symmetrize before decomposing; floor tiny eigenvalues.
        let dim = self.cov.nrows();
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let mut vals = eig.eigenvalues.clone();
        for v in vals.iter_mut() {
            if *v < EIGEN_FLOOR {
                *v = EIGEN_FLOOR;
            }
        }
        self.cov = &eig.eigenvectors
            * DMatrix::from_diagonal(&vals)
            * eig.eigenvectors.transpose();
        self.eigvecs = eig.eigenvectors;
        self.eigvals_sqrt = DVector::from_iterator(dim, vals.iter().map(|v| v.sqrt()));
    }

    fn sample_offset(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let dim = self.mean.len();
        let z = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let scaled = DVector::from_iterator(
            dim,
            z.iter().zip(self.eigvals_sqrt.iter()).map(|(zi, d)| zi * d),
        );
        &self.eigvecs * scaled * self.sigma
    }

    /// One generation update from the sampled points (normalized coords)
    /// ranked best-first.
    fn update(&mut self, ranked: &[DVector<f64>]) {
        let dim = self.mean.len();
        self.generation += 1;
        let old_mean = self.mean.clone();

        let mut new_mean = DVector::zeros(dim);
        for (w, x) in self.weights.iter().zip(ranked.iter().take(self.mu)) {
            new_mean += x * *w;
        }
        // Keep the distribution centered inside the box.
        for v in new_mean.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        let mean_shift = (&new_mean - &old_mean) / self.sigma;
        self.mean = new_mean;

        // C^{-1/2} * shift for the sigma path.
        let inv_sqrt = {
            let inv_vals =
                DVector::from_iterator(dim, self.eigvals_sqrt.iter().map(|d| 1.0 / d));
            &self.eigvecs * DMatrix::from_diagonal(&inv_vals) * self.eigvecs.transpose()
        };
        let cs = self.c_sigma;
        self.path_sigma = &self.path_sigma * (1.0 - cs)
            + &inv_sqrt * &mean_shift * (cs * (2.0 - cs) * self.mu_eff).sqrt();

        let expected_decay = 1.0 - (1.0 - cs).powi(2 * self.generation as i32);
        let h_sigma = self.path_sigma.norm() / expected_decay.sqrt()
            < (1.4 + 2.0 / (dim as f64 + 1.0)) * self.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };

        let cc = self.c_c;
        self.path_cov =
            &self.path_cov * (1.0 - cc) + &mean_shift * (h * (cc * (2.0 - cc) * self.mu_eff).sqrt());

        // Rank-1 and rank-mu covariance update.
        let mut rank_mu = DMatrix::zeros(dim, dim);
        for (w, x) in self.weights.iter().zip(ranked.iter().take(self.mu)) {
            let y = (x - &old_mean) / self.sigma;
            rank_mu += &y * y.transpose() * *w;
        }
        let delta_h = (1.0 - h) * cc * (2.0 - cc);
        self.cov = &self.cov * (1.0 - self.c_1 - self.c_mu)
            + (&self.path_cov * self.path_cov.transpose()
                + &self.cov * delta_h)
                * self.c_1
            + rank_mu * self.c_mu;

        // Step-size adaptation, exponent clamped for numeric safety.
        let arg = (self.c_sigma / self.d_sigma)
            * (self.path_sigma.norm() / self.chi_n - 1.0);
        self.sigma *= arg.min(1.0).exp();
        self.sigma = self.sigma.clamp(1e-12, 1e6);

        self.refresh_decomposition();
    }

    /// Step-size-only update for a generation with no ranking information
    /// (all candidate values identical): the mean stays put and the sigma
    /// path decays toward shorter steps.
    fn update_stepsize_only(&mut self) {
        self.generation += 1;
        self.path_sigma *= 1.0 - self.c_sigma;
        let arg = (self.c_sigma / self.d_sigma)
            * (self.path_sigma.norm() / self.chi_n - 1.0);
        self.sigma *= arg.min(1.0).exp();
        self.sigma = self.sigma.clamp(1e-12, 1e6);
    }
}

/// Bounded-box derivative-free optimizer (CMA-ES or uniform random).
pub struct Optimizer {
    kind: OptimizerKind,
    lower: Vec<f64>,
    upper: Vec<f64>,
    lambda: usize,
    rng: ChaCha8Rng,
    cma: Option<CmaState>,
    pending: Option<Vec<Vec<f64>>>, // normalized coords of the last ask
    best: Option<(Vec<f64>, f64)>,
}

impl Optimizer {
    /// `initial_mean` defaults to the box center; CMA-ES starts there with
    /// step size 0.2 of each dimension's range.
    pub fn new(
        kind: OptimizerKind,
        lower: &[f64],
        upper: &[f64],
        lambda: Option<usize>,
        initial_mean: Option<&[f64]>,
        sigma0: Option<f64>,
        seed: u64,
    ) -> Result<Self, SearchError> {
        if lower.len() != upper.len()
            || lower.is_empty()
            || lower.iter().zip(upper).any(|(l, u)| l > u || !l.is_finite() || !u.is_finite())
        {
            return Err(SearchError::BadBounds);
        }
        let dim = lower.len();
        let lambda = lambda.unwrap_or_else(|| default_lambda(dim));
        let rng = ChaCha8Rng::seed_from_u64(seed);
        let mean_norm = match initial_mean {
            Some(m) => {
                if m.len() != dim {
                    return Err(SearchError::LengthMismatch { expected: dim, got: m.len() });
                }
                let mut v = DVector::zeros(dim);
                for i in 0..dim {
                    if m[i] < lower[i] - 1e-12 || m[i] > upper[i] + 1e-12 {
                        return Err(SearchError::MeanOutOfBounds);
                    }
                    let range = upper[i] - lower[i];
                    v[i] = if range > 0.0 { ((m[i] - lower[i]) / range).clamp(0.0, 1.0) } else { 0.5 };
                }
                v
            }
            None => DVector::from_element(dim, 0.5),
        };
        let cma = match kind {
            OptimizerKind::CmaEs => {
                let mut st = CmaState::new(dim, lambda, mean_norm, sigma0.unwrap_or(SIGMA0));
                st.refresh_decomposition();
                Some(st)
            }
            OptimizerKind::Random => None,
        };
        Ok(Self {
            kind,
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            lambda,
            rng,
            cma,
            pending: None,
            best: None,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Best (point, value) observed so far across all tells.
    pub fn best(&self) -> Option<(&[f64], f64)> {
        self.best.as_ref().map(|(p, v)| (p.as_slice(), *v))
    }

    fn denormalize(&self, x: &DVector<f64>) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.lower[i] + x[i] * (self.upper[i] - self.lower[i]))
            .collect()
    }

    /// Propose `lambda` candidate points, all within the box.
    pub fn ask(&mut self) -> Vec<Vec<f64>> {
        let dim = self.dim();
        let mut norm_points = Vec::with_capacity(self.lambda);
        match &self.cma {
            Some(st) => {
                for _ in 0..self.lambda {
                    let mut x = DVector::zeros(dim);
                    let mut accepted = false;
                    for _ in 0..RESAMPLE_LIMIT {
                        x = &st.mean + st.sample_offset(&mut self.rng);
                        if x.iter().all(|v| (0.0..=1.0).contains(v)) {
                            accepted = true;
                            break;
                        }
                    }
                    if !accepted {
                        for v in x.iter_mut() {
                            *v = v.clamp(0.0, 1.0);
                        }
                    }
                    norm_points.push(x);
                }
            }
            None => {
                for _ in 0..self.lambda {
                    let x = DVector::from_iterator(
                        dim,
                        (0..dim).map(|_| self.rng.gen_range(0.0..=1.0)),
                    );
                    norm_points.push(x);
                }
            }
        }
        let out: Vec<Vec<f64>> = norm_points.iter().map(|x| self.denormalize(x)).collect();
        self.pending = Some(norm_points.iter().map(|x| x.iter().cloned().collect()).collect());
        out
    }

    /// Report objective values for the last `ask`. Non-finite values rank
    /// last. For CMA-ES a generation whose values are all identical only
    /// adapts the step size.
    pub fn tell(&mut self, candidates: &[Vec<f64>], values: &[f64]) -> Result<(), SearchError> {
        if candidates.len() != self.lambda || values.len() != self.lambda {
            return Err(SearchError::LengthMismatch {
                expected: self.lambda,
                got: candidates.len().min(values.len()),
            });
        }
        let pending = self.pending.take().ok_or(SearchError::TellWithoutAsk)?;

        for (c, &v) in candidates.iter().zip(values) {
            if v.is_finite() && self.best.as_ref().map_or(true, |(_, b)| v < *b) {
                self.best = Some((c.clone(), v));
            }
        }

        if let Some(st) = &mut self.cma {
            let keyed: Vec<f64> = values
                .iter()
                .map(|&v| if v.is_finite() { v } else { f64::INFINITY })
                .collect();
            let all_equal = keyed.windows(2).all(|w| w[0] == w[1]);
            if all_equal {
                st.update_stepsize_only();
            } else {
                let mut order: Vec<usize> = (0..keyed.len()).collect();
                order.sort_by(|&a, &b| keyed[a].partial_cmp(&keyed[b]).unwrap());
                let ranked: Vec<DVector<f64>> = order
                    .iter()
                    .map(|&i| DVector::from_vec(pending[i].clone()))
                    .collect();
                st.update(&ranked);
            }
        }
        Ok(())
    }
}

/// Record of one objective evaluation, in call order.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub point: Vec<f64>,
    pub value: f64,
}

/// Driver loop: minimize `f` over the box with at most `eval_budget` calls.
///
/// Runs full generations while budget remains; a final partial generation
/// evaluates only as many candidates as the budget allows (those are not
/// told back). Returns the best observed pair and the full history.
pub fn minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    kind: OptimizerKind,
    lower: &[f64],
    upper: &[f64],
    lambda: Option<usize>,
    initial_mean: Option<&[f64]>,
    eval_budget: usize,
    seed: u64,
) -> Result<(Vec<f64>, f64, Vec<Evaluation>), SearchError> {
    let mut opt = Optimizer::new(kind, lower, upper, lambda, initial_mean, None, seed)?;
    let mut history = Vec::with_capacity(eval_budget);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut remaining = eval_budget;
    while remaining > 0 {
        let candidates = opt.ask();
        let take = candidates.len().min(remaining);
        let mut values = Vec::with_capacity(candidates.len());
        for cand in candidates.iter().take(take) {
            let v = f(cand);
            history.push(Evaluation { point: cand.clone(), value: v });
            // Track best locally: non-finite never wins; ties keep the
            // earliest point so results are order-stable.
            if v.is_finite() && best.as_ref().map_or(true, |(_, b)| v < *b) {
                best = Some((cand.clone(), v));
            }
            values.push(v);
        }
        remaining -= take;
        if take == candidates.len() {
            opt.tell(&candidates, &values)?;
        }
    }
    let (point, value) = best.unwrap_or_else(|| {
        // Budget zero or everything non-finite: fall back to the box center.
        let center: Vec<f64> =
            lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect();
        (center, f64::INFINITY)
    });
    Ok((point, value, history))
}
