//! Ranking SVM surrogate with an RBF kernel in the metric of the current
//! covariance matrix.
//!
//! Training points are ordered best first. The model is trained on the
//! adjacent-rank constraints `f̂(pᵢ) + 1 ≤ f̂(pᵢ₊₁)` only, so it depends on the
//! ordering of the objective values and never on the values themselves.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Stop the dual ascent once a full sweep has no projected-gradient entry
/// larger than this.
const KKT_TOLERANCE: f64 = 1e-3;
/// Constraints whose curvature is below this are skipped.
const MIN_CURVATURE: f64 = 1e-12;

/// Closed range of one hyper-parameter, optionally searched on a log scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperRange {
    pub lo: f64,
    pub hi: f64,
    pub log: bool,
}

impl HyperRange {
    pub fn clamp(&self, v: f64) -> f64 {
        if v.is_nan() {
            return self.lo;
        }
        v.clamp(self.lo, self.hi)
    }

    /// Maps a value to `[0, 1]` (log-scaled when `log` is set).
    pub fn to_unit(&self, v: f64) -> f64 {
        let v = self.clamp(v);
        if self.log {
            (v.ln() - self.lo.ln()) / (self.hi.ln() - self.lo.ln())
        } else {
            (v - self.lo) / (self.hi - self.lo)
        }
    }

    pub fn from_unit(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let v = if self.log {
            (self.lo.ln() + u * (self.hi.ln() - self.lo.ln())).exp()
        } else {
            self.lo + u * (self.hi - self.lo)
        };
        self.clamp(v)
    }
}

/// Ranges of (n_train_frac, kernel_width_mult, cost_base, cost_power, n_iter_mult).
pub const HYPER_RANGES: [HyperRange; 5] = [
    HyperRange { lo: 0.2, hi: 1.0, log: false },
    HyperRange { lo: 0.1, hi: 10.0, log: true },
    HyperRange { lo: 1e-2, hi: 1e6, log: true },
    HyperRange { lo: 0.0, hi: 3.0, log: false },
    HyperRange { lo: 0.25, hi: 4.0, log: true },
];

/// Surrogate hyper-parameters; always inside [`HYPER_RANGES`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateHyperparams {
    n_train_frac: f64,
    kernel_width_mult: f64,
    cost_base: f64,
    cost_power: f64,
    n_iter_mult: f64,
}

impl Default for SurrogateHyperparams {
    fn default() -> Self {
        Self::new(1.0, 1.0, 1e3, 1.0, 1.0)
    }
}

impl SurrogateHyperparams {
    /// Builds a hyper-parameter vector, clamping every field into its range.
    pub fn new(n_train_frac: f64, kernel_width_mult: f64, cost_base: f64, cost_power: f64, n_iter_mult: f64) -> Self {
        Self::from_array([n_train_frac, kernel_width_mult, cost_base, cost_power, n_iter_mult])
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        let c = |i: usize| HYPER_RANGES[i].clamp(v[i]);
        Self {
            n_train_frac: c(0),
            kernel_width_mult: c(1),
            cost_base: c(2),
            cost_power: c(3),
            n_iter_mult: c(4),
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [
            self.n_train_frac,
            self.kernel_width_mult,
            self.cost_base,
            self.cost_power,
            self.n_iter_mult,
        ]
    }

    pub fn to_unit(&self) -> [f64; 5] {
        let a = self.to_array();
        std::array::from_fn(|i| HYPER_RANGES[i].to_unit(a[i]))
    }

    pub fn from_unit(u: [f64; 5]) -> Self {
        Self::from_array(std::array::from_fn(|i| HYPER_RANGES[i].from_unit(u[i])))
    }

    pub fn n_train_frac(&self) -> f64 {
        self.n_train_frac
    }

    pub fn kernel_width_mult(&self) -> f64 {
        self.kernel_width_mult
    }

    pub fn cost_base(&self) -> f64 {
        self.cost_base
    }

    pub fn cost_power(&self) -> f64 {
        self.cost_power
    }

    pub fn n_iter_mult(&self) -> f64 {
        self.n_iter_mult
    }

    pub fn in_range(&self) -> bool {
        self.to_array()
            .iter()
            .zip(&HYPER_RANGES)
            .all(|(v, r)| (r.lo..=r.hi).contains(v))
    }
}

/// Base number of training points, `⌊40 + 4·D^1.7⌋`.
pub fn n_training(dim: usize) -> usize {
    (40.0 + 4.0 * (dim as f64).powf(1.7)).floor() as usize
}

/// Training-set size cap under the given hyper-parameters.
pub fn training_cap(dim: usize, hp: &SurrogateHyperparams) -> usize {
    ((hp.n_train_frac * n_training(dim) as f64).ceil() as usize).max(2)
}

/// A true-evaluated point.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveEntry {
    pub point: DVector<f64>,
    pub fitness: f64,
    pub eval_index: u64,
}

/// Selects the most recent distinct points of the archive (up to the cap) and
/// orders them by ascending fitness.
pub fn build_training_set(archive: &[ArchiveEntry], dim: usize, hp: &SurrogateHyperparams) -> Result<Vec<ArchiveEntry>> {
    if archive.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let cap = training_cap(dim, hp);
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut selected = Vec::with_capacity(cap.min(archive.len()));
    for entry in archive.iter().rev() {
        if selected.len() == cap {
            break;
        }
        let key: Vec<u64> = entry.point.iter().map(|v| v.to_bits()).collect();
        if seen.insert(key) {
            selected.push(entry.clone());
        }
    }
    selected.sort_by(|a, b| a.fitness.total_cmp(&b.fitness));
    Ok(selected)
}

/// Whitening transform `A` with `AᵀA = C⁻¹`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMetric {
    transform: DMatrix<f64>,
}

impl KernelMetric {
    pub fn identity(dim: usize) -> Self {
        Self {
            transform: DMatrix::identity(dim, dim),
        }
    }

    /// `A = diag(1/d)·Bᵀ` from `C = B·diag(d²)·Bᵀ`.
    pub fn from_eigen(basis: &DMatrix<f64>, scales: &DVector<f64>) -> Result<Self> {
        if scales.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::StaleEigendecomposition);
        }
        let mut transform = basis.transpose();
        for (i, d) in scales.iter().enumerate() {
            let mut row = transform.row_mut(i);
            row /= *d;
        }
        Ok(Self { transform })
    }

    pub fn from_covariance(cov: &DMatrix<f64>) -> Result<Self> {
        let eig = SymmetricEigen::new(cov.clone());
        let scales = eig.eigenvalues.map(|v| if v > 0.0 { v.sqrt() } else { f64::NAN });
        Self::from_eigen(&eig.eigenvectors, &scales)
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    pub fn whiten(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.transform * x
    }

    pub fn dim(&self) -> usize {
        self.transform.ncols()
    }
}

/// `exp(−‖A(x−y)‖² / (2s²))`.
pub fn kernel(x: &DVector<f64>, y: &DVector<f64>, metric: &KernelMetric, bandwidth: f64) -> f64 {
    let d = metric.whiten(&(x - y));
    rbf(d.norm_squared(), bandwidth)
}

fn rbf(dist_sq: f64, bandwidth: f64) -> f64 {
    (-dist_sq / (2.0 * bandwidth * bandwidth)).exp()
}

/// Trained comparison-based surrogate.
#[derive(Clone, Debug)]
pub struct RankingModel {
    points: Vec<DVector<f64>>,
    whitened: Vec<DVector<f64>>,
    metric: KernelMetric,
    bandwidth: f64,
    alphas: Vec<f64>,
    costs: Vec<f64>,
    /// Per-point coefficients `αᵢ₋₁ − αᵢ` of the kernel expansion.
    coefficients: Vec<f64>,
    max_iterations: usize,
    iterations: usize,
    trained: bool,
}

impl RankingModel {
    /// Sets up kernel, bandwidth and constraint costs without training.
    pub fn prepare(points: &[DVector<f64>], hp: &SurrogateHyperparams, metric: &KernelMetric) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(Error::TooFewPoints { needed: 2, got: n });
        }
        if let Some(p) = points.iter().find(|p| p.len() != metric.dim()) {
            return Err(Error::DimensionMismatch {
                expected: metric.dim(),
                got: p.len(),
            });
        }
        let whitened: Vec<DVector<f64>> = points.iter().map(|p| metric.whiten(p)).collect();

        let mut dist_sum = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                dist_sum += (&whitened[i] - &whitened[j]).norm();
            }
        }
        let mean_dist = dist_sum / (n * (n - 1) / 2) as f64;
        if !(mean_dist > 0.0 && mean_dist.is_finite()) {
            return Err(Error::Training("training points are all identical".into()));
        }

        let costs = (1..n)
            .map(|i| hp.cost_base() * ((n - i) as f64).powf(hp.cost_power()))
            .collect();
        Ok(Self {
            points: points.to_vec(),
            whitened,
            metric: metric.clone(),
            bandwidth: hp.kernel_width_mult() * mean_dist,
            alphas: vec![0.0; n - 1],
            costs,
            coefficients: vec![0.0; n],
            max_iterations: (hp.n_iter_mult() * 1000.0 * n as f64).ceil() as usize,
            iterations: 0,
            trained: false,
        })
    }

    /// Coordinate-wise dual ascent over the adjacent-rank constraints, running
    /// at most `max_updates` single-constraint updates.
    pub fn fit(&mut self, max_updates: usize) {
        let n = self.points.len();
        let m = n - 1;
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            k[i * n + i] = 1.0;
            for j in (i + 1)..n {
                let v = rbf((&self.whitened[i] - &self.whitened[j]).norm_squared(), self.bandwidth);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        // Gram matrix of the difference vectors Φ(pᵢ₊₁) − Φ(pᵢ).
        let mut q = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                q[i * m + j] = k[(i + 1) * n + j + 1] - k[(i + 1) * n + j] - k[i * n + j + 1] + k[i * n + j];
            }
        }

        let alphas = &mut self.alphas;
        alphas.iter_mut().for_each(|a| *a = 0.0);
        let mut q_alpha = vec![0.0; m];
        let mut sweep_violation: f64 = 0.0;
        let mut done = 0;
        while done < max_updates {
            let i = done % m;
            done += 1;
            let q_ii = q[i * m + i];
            if q_ii > MIN_CURVATURE {
                let grad: f64 = 1.0 - q_alpha[i];
                let a = alphas[i];
                let projected = if a <= 0.0 {
                    grad.max(0.0)
                } else if a >= self.costs[i] {
                    grad.min(0.0)
                } else {
                    grad
                };
                sweep_violation = sweep_violation.max(projected.abs());
                let updated = (a + grad / q_ii).clamp(0.0, self.costs[i]);
                let delta = updated - a;
                if delta != 0.0 {
                    alphas[i] = updated;
                    let col = &q[i * m..(i + 1) * m];
                    for (qa, qv) in q_alpha.iter_mut().zip(col) {
                        *qa += delta * qv;
                    }
                }
            }
            if i == m - 1 {
                if sweep_violation < KKT_TOLERANCE {
                    break;
                }
                sweep_violation = 0.0;
            }
        }
        self.iterations = done;

        let coefficients = &mut self.coefficients;
        for (j, c) in coefficients.iter_mut().enumerate() {
            let prev = if j > 0 { alphas[j - 1] } else { 0.0 };
            let cur = if j < m { alphas[j] } else { 0.0 };
            *c = prev - cur;
        }
        self.trained = true;
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn metric(&self) -> &KernelMetric {
        &self.metric
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    /// Update budget implied by the hyper-parameters.
    pub fn max_iterations(&self) -> usize {
        self.max_iterations
    }

    /// Updates actually performed by the last `fit`.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Surrogate score; lower is predicted better.
    pub fn predict(&self, x: &DVector<f64>) -> Result<f64> {
        if !self.trained {
            return Err(Error::UntrainedModel);
        }
        if x.len() != self.metric.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.metric.dim(),
                got: x.len(),
            });
        }
        let wx = self.metric.whiten(x);
        let mut score = 0.0;
        for (p, c) in self.whitened.iter().zip(&self.coefficients) {
            if *c != 0.0 {
                score += c * rbf((&wx - p).norm_squared(), self.bandwidth);
            }
        }
        Ok(score)
    }

    /// Ranking error of the model on points with known true fitness.
    pub fn model_error(&self, points: &[DVector<f64>], fitness: &[f64]) -> Result<f64> {
        let scores = points.iter().map(|p| self.predict(p)).collect::<Result<Vec<_>>>()?;
        ranking_error(&scores, fitness)
    }
}

/// Trains a model on points ordered best first.
pub fn train(points: &[DVector<f64>], hp: &SurrogateHyperparams, metric: &KernelMetric) -> Result<RankingModel> {
    let mut model = RankingModel::prepare(points, hp, metric)?;
    let budget = model.max_iterations;
    model.fit(budget);
    Ok(model)
}

/// Fraction of point pairs whose predicted order contradicts the true order.
///
/// A pair tied in one ordering but strictly ordered in the other counts as
/// half an error.
pub fn ranking_error(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::LengthMismatch {
            expected: actual.len(),
            got: predicted.len(),
        });
    }
    let n = actual.len();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let mut errors = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let t = actual[i].total_cmp(&actual[j]);
            let p = predicted[i].total_cmp(&predicted[j]);
            if t != p {
                errors += if t.is_eq() || p.is_eq() { 0.5 } else { 1.0 };
            }
        }
    }
    Ok(errors / (n * (n - 1) / 2) as f64)
}
