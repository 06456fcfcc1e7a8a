//! (μ/μ_w, λ)-CMA-ES with cumulative step-size adaptation and the active
//! (negative-weight) covariance update.
//!
//! The strategy is split into [`CmaState::ask`], which samples λ candidates from
//! N(m, σ²C), and [`CmaState::tell`], which consumes the fitness values of those
//! candidates. Only the ranking of the fitness values is ever used, so any
//! strictly increasing transformation of the objective yields the same search
//! trajectory.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Eigenvalues of `C` below this fraction of the largest one are clamped.
const EIGEN_FLOOR_RATIO: f64 = 1e-30;
/// Condition number of `C` above which a run is terminated.
pub const MAX_CONDITION: f64 = 1e14;
/// Range of recent best fitness values below which a run is terminated.
pub const TOL_FUN: f64 = 1e-12;
/// Multiplied by the initial step-size to obtain the `tol_x` threshold.
pub const TOL_X_FACTOR: f64 = 1e-12;

/// Default population size `4 + ⌊3 ln D⌋`.
pub fn default_lambda(dim: usize) -> usize {
    4 + (3.0 * (dim as f64).ln()).floor() as usize
}

/// Strategy parameters. Construct through [`CmaParams::builder`].
#[derive(Clone, Debug, PartialEq)]
pub struct CmaParams {
    pub dim: usize,
    pub lambda: usize,
    pub mu: usize,
    /// μ positive recombination weights, non-increasing, summing to one.
    pub weights: Vec<f64>,
    /// λ−μ non-positive weights for the worst candidates (all zero when passive).
    pub neg_weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub active: bool,
    pub noisy_rates: bool,
    /// Expected length of a standard normal vector, E‖N(0, I)‖.
    pub chi_n: f64,
}

#[derive(Clone, Debug)]
pub struct CmaParamsBuilder {
    dim: usize,
    lambda: Option<usize>,
    active: bool,
    noisy_rates: bool,
}

impl CmaParamsBuilder {
    pub fn lambda(mut self, lambda: usize) -> Self {
        self.lambda = Some(lambda);
        self
    }

    pub fn active(mut self, active: bool) -> Self {
        self.active = active;
        self
    }

    /// Divide the rank-one and rank-μ learning rates by five.
    pub fn noisy_rates(mut self, noisy: bool) -> Self {
        self.noisy_rates = noisy;
        self
    }

    pub fn build(self) -> Result<CmaParams> {
        let dim = self.dim;
        if dim == 0 {
            return Err(Error::InvalidParams("dimension must be positive".into()));
        }
        let lambda = self.lambda.unwrap_or_else(|| default_lambda(dim));
        if lambda < 2 {
            return Err(Error::InvalidParams(format!("lambda must be >= 2, got {lambda}")));
        }
        let mu = lambda / 2;
        let n = dim as f64;

        let raw: Vec<f64> = (1..=lambda)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let pos_sum: f64 = raw[..mu].iter().sum();
        let weights: Vec<f64> = raw[..mu].iter().map(|w| w / pos_sum).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let neg_raw = &raw[mu..];
        let neg_abs_sum: f64 = neg_raw.iter().map(|w| w.abs()).sum();
        let neg_sq_sum: f64 = neg_raw.iter().map(|w| w * w).sum();
        let mu_eff_neg = if neg_sq_sum > 0.0 {
            neg_abs_sum * neg_abs_sum / neg_sq_sum
        } else {
            0.0
        };

        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let alpha_cov = 2.0;
        let mut c_1 = alpha_cov / ((n + 1.3).powi(2) + mu_eff);
        let mut c_mu = (1.0 - c_1).min(
            alpha_cov * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + alpha_cov * mu_eff / 2.0),
        );
        if self.noisy_rates {
            c_1 /= 5.0;
            c_mu /= 5.0;
        }

        let neg_weights = if self.active && neg_abs_sum > 0.0 && c_mu > 0.0 {
            let alpha_mu = 1.0 + c_1 / c_mu;
            let alpha_mu_eff = 1.0 + 2.0 * mu_eff_neg / (mu_eff + 2.0);
            let alpha_pos_def = (1.0 - c_1 - c_mu) / (n * c_mu);
            let scale = alpha_mu.min(alpha_mu_eff).min(alpha_pos_def) / neg_abs_sum;
            neg_raw.iter().map(|w| w * scale).collect()
        } else {
            vec![0.0; lambda - mu]
        };

        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

        let params = CmaParams {
            dim,
            lambda,
            mu,
            weights,
            neg_weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            active: self.active,
            noisy_rates: self.noisy_rates,
            chi_n,
        };
        params.validate()?;
        Ok(params)
    }
}

impl CmaParams {
    /// Active CMA-ES with default population size and default learning rates.
    pub fn builder(dim: usize) -> CmaParamsBuilder {
        CmaParamsBuilder {
            dim,
            lambda: None,
            active: true,
            noisy_rates: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.mu < 1 || 2 * self.mu > self.lambda {
            return bad(format!("need 1 <= mu <= lambda/2, got mu={} lambda={}", self.mu, self.lambda));
        }
        if self.weights.len() != self.mu || self.neg_weights.len() != self.lambda - self.mu {
            return bad("weight vector lengths do not match mu / lambda".into());
        }
        if self.weights.iter().any(|&w| w <= 0.0) || self.weights.windows(2).any(|p| p[1] > p[0]) {
            return bad("positive weights must be strictly positive and non-increasing".into());
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return bad("positive weights must sum to one".into());
        }
        if self.neg_weights.iter().any(|&w| w > 0.0) {
            return bad("negative weights must be non-positive".into());
        }
        let c = self.c_1 + self.c_mu;
        if !(c > 0.0 && c <= 1.0) {
            return bad(format!("need 0 < c_1 + c_mu <= 1, got {c}"));
        }
        if !(self.c_sigma > 0.0 && self.c_sigma < 1.0) || self.d_sigma < 1.0 {
            return bad("invalid step-size adaptation rates".into());
        }
        Ok(())
    }

    /// Number of generations between two eigendecompositions of `C`.
    pub fn eigen_refresh_gap(&self) -> u64 {
        (1.0 / (10.0 * self.dim as f64 * (self.c_1 + self.c_mu))).ceil().max(1.0) as u64
    }
}

/// A sampled point together with the draws that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub x: DVector<f64>,
    /// Standard normal draw.
    pub z: DVector<f64>,
    /// Step `B·diag(d)·z`, so that `x = m + σ·y`.
    pub y: DVector<f64>,
}

/// Why a run stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TerminationReason {
    TolFun,
    TolX,
    ConditionCov,
    Stagnation,
    EqFunValues,
}

impl std::fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TerminationReason::TolFun => "tol_fun",
            TerminationReason::TolX => "tol_x",
            TerminationReason::ConditionCov => "condition_cov",
            TerminationReason::Stagnation => "stagnation",
            TerminationReason::EqFunValues => "eq_fun_values",
        };
        f.write_str(s)
    }
}

/// Full strategy state.
#[derive(Clone, Debug)]
pub struct CmaState {
    params: CmaParams,
    mean: DVector<f64>,
    sigma: f64,
    sigma0: f64,
    cov: DMatrix<f64>,
    p_sigma: DVector<f64>,
    p_c: DVector<f64>,
    basis: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    /// Square roots of `eigenvalues`.
    scales: DVector<f64>,
    eigen_generation: u64,
    eigen_valid: bool,
    generation: u64,
    eval_count: u64,
    best_seen: Option<(DVector<f64>, f64)>,
}

impl CmaState {
    pub fn new(params: CmaParams, mean: DVector<f64>, sigma0: f64) -> Result<Self> {
        params.validate()?;
        if mean.len() != params.dim {
            return Err(Error::DimensionMismatch {
                expected: params.dim,
                got: mean.len(),
            });
        }
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(Error::NonPositiveStepSize(sigma0));
        }
        let n = params.dim;
        Ok(Self {
            params,
            mean,
            sigma: sigma0,
            sigma0,
            cov: DMatrix::identity(n, n),
            p_sigma: DVector::zeros(n),
            p_c: DVector::zeros(n),
            basis: DMatrix::identity(n, n),
            eigenvalues: DVector::from_element(n, 1.0),
            scales: DVector::from_element(n, 1.0),
            eigen_generation: 0,
            eigen_valid: true,
            generation: 0,
            eval_count: 0,
            best_seen: None,
        })
    }

    pub fn params(&self) -> &CmaParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn lambda(&self) -> usize {
        self.params.lambda
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn p_sigma(&self) -> &DVector<f64> {
        &self.p_sigma
    }

    pub fn p_c(&self) -> &DVector<f64> {
        &self.p_c
    }

    /// Cached eigenvectors of `C` (columns).
    pub fn eigen_basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Cached eigenvalues of `C`.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Square roots of the cached eigenvalues.
    pub fn axis_scales(&self) -> &DVector<f64> {
        &self.scales
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn eval_count(&self) -> u64 {
        self.eval_count
    }

    pub fn best_seen(&self) -> Option<(&DVector<f64>, f64)> {
        self.best_seen.as_ref().map(|(x, f)| (x, *f))
    }

    pub fn condition_number(&self) -> f64 {
        let max = self.eigenvalues.max();
        let min = self.eigenvalues.min();
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    /// Replaces the covariance matrix and refreshes the eigendecomposition.
    pub fn set_covariance(&mut self, cov: DMatrix<f64>) -> Result<()> {
        let n = self.dim();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: cov.nrows(),
            });
        }
        self.cov = cov;
        symmetrize(&mut self.cov);
        self.refresh_eigen()
    }

    /// Samples λ candidates `x = m + σ·B·diag(d)·z`.
    pub fn ask<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<Candidate>> {
        self.check_eigen()?;
        let n = self.dim();
        (0..self.lambda())
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                self.candidate_from_z(z)
            })
            .collect()
    }

    /// Maps a given standard normal draw to a candidate.
    pub fn candidate_from_z(&self, z: DVector<f64>) -> Result<Candidate> {
        self.check_eigen()?;
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: z.len(),
            });
        }
        let y = &self.basis * z.component_mul(&self.scales);
        let x = &self.mean + &y * self.sigma;
        Ok(Candidate { x, z, y })
    }

    /// Wraps an externally chosen point, recovering its step and draw.
    pub fn candidate_from_point(&self, x: DVector<f64>) -> Result<Candidate> {
        self.check_eigen()?;
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let y = (&x - &self.mean) / self.sigma;
        let z = (self.basis.transpose() * &y).component_div(&self.scales);
        Ok(Candidate { x, z, y })
    }

    /// Updates mean, step-size, evolution paths and covariance from the
    /// fitness values (lower is better) of the candidates returned by `ask`.
    pub fn tell(&mut self, candidates: &[Candidate], fitness: &[f64]) -> Result<()> {
        let lambda = self.lambda();
        if candidates.len() != lambda {
            return Err(Error::LengthMismatch {
                expected: lambda,
                got: candidates.len(),
            });
        }
        if fitness.len() != lambda {
            return Err(Error::LengthMismatch {
                expected: lambda,
                got: fitness.len(),
            });
        }
        if let Some(i) = fitness.iter().position(|f| !f.is_finite()) {
            return Err(Error::NonFiniteFitness(i));
        }
        for c in candidates {
            if c.x.len() != self.dim() || c.y.len() != self.dim() || c.z.len() != self.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.dim(),
                    got: c.x.len(),
                });
            }
        }

        let order = rank_order(fitness);
        let p = &self.params;
        let n = p.dim as f64;

        // Recombination
        let mut y_w = DVector::zeros(p.dim);
        let mut z_w = DVector::zeros(p.dim);
        for (w, &i) in p.weights.iter().zip(&order) {
            y_w += &candidates[i].y * *w;
            z_w += &candidates[i].z * *w;
        }
        self.mean = &self.mean + &y_w * self.sigma;

        // Step-size path; C^{-1/2}·y = B·z
        let whitened = &self.basis * z_w;
        let cs = p.c_sigma;
        self.p_sigma = &self.p_sigma * (1.0 - cs) + whitened * (cs * (2.0 - cs) * p.mu_eff).sqrt();

        let t = (self.generation + 1) as f64;
        let ps_norm = self.p_sigma.norm();
        let h_sigma = ps_norm / (1.0 - (1.0 - cs).powf(2.0 * t)).sqrt() < (1.4 + 2.0 / (n + 1.0)) * p.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };

        let cc = p.c_c;
        self.p_c = &self.p_c * (1.0 - cc) + &y_w * (h * (cc * (2.0 - cc) * p.mu_eff).sqrt());

        // Covariance
        let delta_h = (1.0 - h) * cc * (2.0 - cc);
        let mut weight_sum: f64 = p.weights.iter().sum();
        if p.active {
            weight_sum += p.neg_weights.iter().sum::<f64>();
        }
        let decay = 1.0 + p.c_1 * delta_h - p.c_1 - p.c_mu * weight_sum;
        let mut cov = &self.cov * decay;
        cov.ger(p.c_1, &self.p_c, &self.p_c, 1.0);
        for (w, &i) in p.weights.iter().zip(&order) {
            let y = &candidates[i].y;
            cov.ger(p.c_mu * w, y, y, 1.0);
        }
        if p.active {
            for (w, &i) in p.neg_weights.iter().zip(&order[p.mu..]) {
                if *w == 0.0 {
                    continue;
                }
                let z_sq = candidates[i].z.norm_squared();
                if z_sq <= 0.0 {
                    continue;
                }
                let y = &candidates[i].y;
                cov.ger(p.c_mu * w * n / z_sq, y, y, 1.0);
            }
        }
        symmetrize(&mut cov);
        self.cov = cov;

        // Step-size
        let exponent = ((cs / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).min(1.0);
        self.sigma *= exponent.exp();
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::NonPositiveStepSize(self.sigma));
        }

        self.generation += 1;
        if self.generation - self.eigen_generation >= self.params.eigen_refresh_gap() {
            self.refresh_eigen()?;
        }
        Ok(())
    }

    /// Accounts for true objective evaluations and tracks the best point seen.
    pub fn record_evaluations(&mut self, candidates: &[Candidate], fitness: &[f64]) {
        self.eval_count += fitness.len() as u64;
        for (c, &f) in candidates.iter().zip(fitness) {
            let improved = match &self.best_seen {
                None => true,
                Some((_, best)) => f < *best,
            };
            if improved {
                self.best_seen = Some((c.x.clone(), f));
            }
        }
    }

    /// Recomputes `B` and `d`, clamping eigenvalues that are not sufficiently
    /// positive and reassembling `C` when a clamp happened.
    pub fn refresh_eigen(&mut self) -> Result<()> {
        if self.cov.iter().any(|v| !v.is_finite()) {
            self.eigen_valid = false;
            return Err(Error::StaleEigendecomposition);
        }
        let eig = SymmetricEigen::new(self.cov.clone());
        let mut values = eig.eigenvalues;
        let basis = eig.eigenvectors;
        let max = values.max();
        if !(max > 0.0) {
            self.eigen_valid = false;
            return Err(Error::StaleEigendecomposition);
        }
        let floor = EIGEN_FLOOR_RATIO * max;
        if values.iter().any(|&v| v <= floor) {
            values.apply(|v| *v = v.max(floor));
            let mut cov = &basis * DMatrix::from_diagonal(&values) * basis.transpose();
            symmetrize(&mut cov);
            self.cov = cov;
        }
        self.scales = values.map(f64::sqrt);
        self.eigenvalues = values;
        self.basis = basis;
        self.eigen_generation = self.generation;
        self.eigen_valid = true;
        Ok(())
    }

    fn check_eigen(&self) -> Result<()> {
        if !self.eigen_valid || self.scales.len() != self.dim() || self.scales.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::StaleEigendecomposition);
        }
        Ok(())
    }

    /// Checks the termination criteria against the true-fitness history.
    pub fn should_terminate(&self, history: &FitnessHistory) -> Option<TerminationReason> {
        if self.condition_number() > MAX_CONDITION {
            return Some(TerminationReason::ConditionCov);
        }
        let tol_fun_window = history.tol_fun_window();
        if history.best.len() >= tol_fun_window {
            let recent = history.best.iter().rev().take(tol_fun_window);
            let (lo, hi) = recent.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if hi - lo < TOL_FUN {
                return Some(TerminationReason::TolFun);
            }
        }
        let tol_x = TOL_X_FACTOR * self.sigma0;
        let small = (0..self.dim()).all(|i| {
            self.sigma * self.p_c[i].abs() < tol_x && self.sigma * self.cov[(i, i)].sqrt() < tol_x
        });
        if small {
            return Some(TerminationReason::TolX);
        }
        if let Some(last) = &history.last {
            let k = ((0.7 * last.len() as f64).ceil() as usize).clamp(1, last.len()) - 1;
            if last.len() > 1 && last[0] == last[k] {
                return Some(TerminationReason::EqFunValues);
            }
        }
        if history.is_stagnating() {
            return Some(TerminationReason::Stagnation);
        }
        None
    }
}

/// Indices sorted by ascending fitness; ties keep submission order.
pub fn rank_order(fitness: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]));
    order
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            m[(i, j)] = m[(j, i)];
        }
    }
}

/// Recent true-fitness statistics consumed by the termination criteria.
#[derive(Clone, Debug)]
pub struct FitnessHistory {
    best: VecDeque<f64>,
    median: VecDeque<f64>,
    last: Option<Vec<f64>>,
    tol_fun_window: usize,
    stagnation_window: usize,
}

impl FitnessHistory {
    pub fn new(dim: usize, lambda: usize) -> Self {
        let ratio = 30.0 * dim as f64 / lambda as f64;
        Self {
            best: VecDeque::new(),
            median: VecDeque::new(),
            last: None,
            tol_fun_window: 10 + ratio.ceil() as usize,
            stagnation_window: (120.0 + ratio).ceil() as usize,
        }
    }

    pub fn tol_fun_window(&self) -> usize {
        self.tol_fun_window
    }

    pub fn stagnation_window(&self) -> usize {
        self.stagnation_window
    }

    pub fn len(&self) -> usize {
        self.best.len()
    }

    pub fn is_empty(&self) -> bool {
        self.best.is_empty()
    }

    /// Records the fitness values of one true-objective generation.
    pub fn record(&mut self, fitness: &[f64]) {
        if fitness.is_empty() {
            return;
        }
        let mut sorted = fitness.to_vec();
        sorted.sort_by(f64::total_cmp);
        self.best.push_back(sorted[0]);
        self.median.push_back(median_sorted(&sorted));
        let cap = self.stagnation_window.max(self.tol_fun_window);
        while self.best.len() > cap {
            self.best.pop_front();
            self.median.pop_front();
        }
        self.last = Some(sorted);
    }

    /// No improvement of the best and median fitness between the oldest and
    /// newest 20 generations of a full stagnation window.
    fn is_stagnating(&self) -> bool {
        if self.best.len() < self.stagnation_window {
            return false;
        }
        let k = 20.min(self.stagnation_window / 2);
        let stalled = |series: &VecDeque<f64>| {
            let old: Vec<f64> = series.iter().take(k).copied().collect();
            let new: Vec<f64> = series.iter().rev().take(k).copied().collect();
            median_unsorted(&new) >= median_unsorted(&old)
        };
        stalled(&self.best) && stalled(&self.median)
    }
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn median_unsorted(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    median_sorted(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sphere(x: &DVector<f64>) -> f64 {
        x.norm_squared()
    }

    fn state(dim: usize, lambda: Option<usize>, active: bool) -> CmaState {
        let mut b = CmaParams::builder(dim).active(active);
        if let Some(l) = lambda {
            b = b.lambda(l);
        }
        CmaState::new(b.build().unwrap(), DVector::from_element(dim, 1.0), 0.5).unwrap()
    }

    fn generation(s: &mut CmaState, rng: &mut ChaCha8Rng, f: impl Fn(&DVector<f64>) -> f64) -> Vec<Candidate> {
        let cands = s.ask(rng).unwrap();
        let fit: Vec<f64> = cands.iter().map(|c| f(&c.x)).collect();
        s.tell(&cands, &fit).unwrap();
        cands
    }

    #[test]
    fn default_population_sizes() {
        // 4 + floor(3 ln D)
        for (dim, expected) in [(2, 6), (5, 8), (10, 10), (20, 12), (40, 15)] {
            let oracle = 4 + (3.0 * (dim as f64).ln()) as usize;
            assert_eq!(oracle, expected);
            assert_eq!(CmaParams::builder(dim).build().unwrap().lambda, expected);
        }
    }

    #[test]
    fn params_invariants_hold() {
        for dim in [1, 2, 3, 5, 10, 20, 40] {
            for lambda in [default_lambda(dim), 2 * default_lambda(dim), 64] {
                for noisy in [false, true] {
                    let p = CmaParams::builder(dim).lambda(lambda).noisy_rates(noisy).build().unwrap();
                    p.validate().unwrap();
                    assert!(p.neg_weights.iter().all(|w| *w <= 0.0));
                    if p.c_1 + p.c_mu < 1.0 - 1e-12 {
                        assert!(p.neg_weights.iter().sum::<f64>() < 0.0, "dim {dim} lambda {lambda}");
                    }
                }
            }
        }
    }

    #[test]
    fn noisy_rates_are_one_fifth() {
        for dim in [2, 5, 20] {
            let a = CmaParams::builder(dim).build().unwrap();
            let b = CmaParams::builder(dim).noisy_rates(true).build().unwrap();
            assert_eq!(b.c_1, a.c_1 / 5.0);
            assert_eq!(b.c_mu, a.c_mu / 5.0);
        }
    }

    #[test]
    fn passive_params_have_zero_negative_weights() {
        let p = CmaParams::builder(5).active(false).build().unwrap();
        assert!(p.neg_weights.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn init_state() {
        let p = CmaParams::builder(2).build().unwrap();
        let s = CmaState::new(p, DVector::zeros(2), 1.0).unwrap();
        assert_eq!(s.covariance(), &DMatrix::<f64>::identity(2, 2));
        assert_eq!(s.p_sigma(), &DVector::<f64>::zeros(2));
        assert_eq!(s.p_c(), &DVector::<f64>::zeros(2));
        assert_eq!(s.generation(), 0);
    }

    #[test]
    fn init_errors() {
        let p = CmaParams::builder(3).build().unwrap();
        assert!(matches!(
            CmaState::new(p.clone(), DVector::zeros(2), 1.0),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
        assert!(matches!(CmaState::new(p.clone(), DVector::zeros(3), 0.0), Err(Error::NonPositiveStepSize(_))));
        assert!(CmaState::new(p, DVector::zeros(3), -1.0).is_err());
    }

    #[test]
    fn zero_draw_maps_to_mean() {
        let s = state(4, None, true);
        let c = s.candidate_from_z(DVector::zeros(4)).unwrap();
        assert_eq!(c.x, *s.mean());
    }

    #[test]
    fn sample_variance_matches_identity() {
        let p = CmaParams::builder(3).lambda(10_000).build().unwrap();
        let s = CmaState::new(p, DVector::zeros(3), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cands = s.ask(&mut rng).unwrap();
        for i in 0..3 {
            let n = cands.len() as f64;
            let mean = cands.iter().map(|c| c.x[i]).sum::<f64>() / n;
            let var = cands.iter().map(|c| (c.x[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!((0.9..=1.1).contains(&var), "variance {var}");
        }
    }

    #[test]
    fn one_dimensional_scaled_sampling() {
        let p = CmaParams::builder(1).lambda(10_000).build().unwrap();
        let mut s = CmaState::new(p, DVector::from_element(1, 5.0), 0.5).unwrap();
        s.set_covariance(DMatrix::from_element(1, 1, 4.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = s.ask(&mut rng).unwrap().iter().map(|c| c.x[0]).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 1.0).abs() < 0.1, "std {std}");
    }

    #[test]
    fn single_parent_mean_is_best_point() {
        let p = CmaParams::builder(3).lambda(2).build().unwrap();
        assert_eq!(p.mu, 1);
        assert_eq!(p.weights, vec![1.0]);
        let mut s = CmaState::new(p, DVector::from_element(3, 0.3), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cands = s.ask(&mut rng).unwrap();
        let fit: Vec<f64> = cands.iter().map(|c| sphere(&c.x)).collect();
        let best = if fit[0] <= fit[1] { 0 } else { 1 };
        s.tell(&cands, &fit).unwrap();
        assert_eq!(s.mean(), &cands[best].x);
    }

    #[test]
    fn ties_are_broken_by_submission_order() {
        assert_eq!(rank_order(&[1.0, 0.5, 1.0, 0.5]), vec![1, 3, 0, 2]);
        let run = || {
            let mut s = state(3, None, true);
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            for _ in 0..5 {
                generation(&mut s, &mut rng, |_| 7.0);
            }
            (s.mean().clone(), s.covariance().clone(), s.sigma())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn tell_increments_generation_and_rejects_bad_input() {
        let mut s = state(3, None, true);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cands = s.ask(&mut rng).unwrap();
        let mut fit: Vec<f64> = cands.iter().map(|c| sphere(&c.x)).collect();
        assert!(matches!(s.tell(&cands, &fit[1..]), Err(Error::LengthMismatch { .. })));
        fit[2] = f64::NAN;
        assert!(matches!(s.tell(&cands, &fit), Err(Error::NonFiniteFitness(2))));
        fit[2] = 1.0;
        s.tell(&cands, &fit).unwrap();
        assert_eq!(s.generation(), 1);
    }

    #[test]
    fn passive_update_ignores_worst_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let base = state(4, Some(10), false);
        let cands = base.ask(&mut rng).unwrap();
        let fit: Vec<f64> = cands.iter().map(|c| sphere(&c.x)).collect();
        let order = rank_order(&fit);

        let mut a = base.clone();
        a.tell(&cands, &fit).unwrap();

        // Replace every non-selected candidate with a different point of the
        // same rank.
        let mut other = cands.clone();
        for &i in &order[base.params().mu..] {
            let z = other[i].z.map(|v| -2.0 * v + 0.1);
            other[i] = base.candidate_from_z(z).unwrap();
        }
        let mut b = base.clone();
        b.tell(&other, &fit).unwrap();
        assert_eq!(a.covariance(), b.covariance());
        assert_eq!(a.mean(), b.mean());
    }

    #[test]
    fn monotone_transform_gives_identical_trajectory() {
        let run = |g: fn(f64) -> f64| {
            let mut s = state(5, None, true);
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut points = Vec::new();
            for _ in 0..50 {
                let cands = generation(&mut s, &mut rng, |x| g(sphere(x)));
                points.extend(cands.into_iter().map(|c| c.x));
            }
            points
        };
        assert_eq!(run(|y| y), run(f64::ln_1p));
    }

    #[test]
    fn rotation_equivariance_of_mean_trajectory() {
        let dim = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r = g.qr().q();
        let scales: Vec<f64> = (0..dim).map(|i| 10f64.powi(i as i32)).collect();
        let f = |x: &DVector<f64>| x.iter().zip(&scales).map(|(v, s)| s * v * v).sum::<f64>();

        let m0 = DVector::from_fn(dim, |i, _| 1.0 + i as f64);
        let params = CmaParams::builder(dim).build().unwrap();
        let mut a = CmaState::new(params.clone(), m0.clone(), 0.7).unwrap();
        let mut b = CmaState::new(params, r.transpose() * &m0, 0.7).unwrap();
        let mut sample_rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let ca = a.ask(&mut sample_rng).unwrap();
            let cb: Vec<Candidate> = ca
                .iter()
                .map(|c| b.candidate_from_point(r.transpose() * &c.x).unwrap())
                .collect();
            let fa: Vec<f64> = ca.iter().map(|c| f(&c.x)).collect();
            let fb: Vec<f64> = cb.iter().map(|c| f(&(&r * &c.x))).collect();
            a.tell(&ca, &fa).unwrap();
            b.tell(&cb, &fb).unwrap();
            let diff = (&r * b.mean() - a.mean()).norm();
            assert!(diff <= 1e-8, "mean drift {diff}");
        }
    }

    #[test]
    fn covariance_stays_symmetric_and_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut s = state(6, None, true);
        let f = |x: &DVector<f64>| x.iter().enumerate().map(|(i, v)| 1e3f64.powi(i as i32) * v * v).sum::<f64>();
        for _ in 0..300 {
            generation(&mut s, &mut rng, f);
            let c = s.covariance();
            assert!((c - c.transpose()).amax() <= 1e-12);
            assert!(s.eigenvalues().iter().all(|&v| v > 0.0));
            assert!(s.sigma().is_finite() && s.sigma() > 0.0);
        }
    }

    #[test]
    fn eigenvalue_repair_clamps_non_positive_values() {
        let mut s = state(2, None, true);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-3]);
        s.set_covariance(bad).unwrap();
        assert!(s.eigenvalues().iter().all(|&v| v > 0.0));
        assert!((s.eigenvalues().min() - 1e-30).abs() < 1e-40);
    }

    #[test]
    fn converges_on_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = state(5, None, true);
        for _ in 0..400 {
            generation(&mut s, &mut rng, sphere);
        }
        assert!(sphere(s.mean()) < 1e-10);
    }

    #[test]
    fn terminate_on_ill_conditioned_covariance() {
        let mut s = state(2, None, true);
        s.set_covariance(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e15])).unwrap();
        let h = FitnessHistory::new(2, s.lambda());
        assert_eq!(s.should_terminate(&h), Some(TerminationReason::ConditionCov));
    }

    #[test]
    fn terminate_on_flat_history() {
        let s = state(2, None, true);
        let mut h = FitnessHistory::new(2, s.lambda());
        for i in 0..h.tol_fun_window() {
            assert_eq!(s.should_terminate(&h), None);
            h.record(&[1.0 + 1e-14 * i as f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        }
        assert_eq!(s.should_terminate(&h), Some(TerminationReason::TolFun));
    }

    #[test]
    fn fresh_state_does_not_terminate() {
        let s = state(3, None, true);
        assert_eq!(s.should_terminate(&FitnessHistory::new(3, s.lambda())), None);
    }

    #[test]
    fn terminate_on_equal_function_values() {
        let s = state(3, None, true);
        let mut h = FitnessHistory::new(3, s.lambda());
        h.record(&[2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 3.0]);
        assert_eq!(s.should_terminate(&h), Some(TerminationReason::EqFunValues));
    }

    #[test]
    fn terminate_on_stagnation() {
        let s = state(3, None, true);
        let mut h = FitnessHistory::new(3, s.lambda());
        for i in 0..h.stagnation_window() {
            let v = 1.0 + i as f64;
            h.record(&[v, v + 1.0, v + 2.0]);
        }
        assert_eq!(s.should_terminate(&h), Some(TerminationReason::Stagnation));
    }
}
