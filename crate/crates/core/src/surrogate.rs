//! Surrogate-assisted generation cycle.
//!
//! Each cycle optimizes the Ranking SVM surrogate for `n̂` generations of the
//! same CMA-ES state and then spends one generation (λ evaluations) on the
//! true objective. The surrogate's ranking error on that generation sets the
//! next `n̂`, and a tournament of `λ_hyp` candidate hyper-parameter vectors
//! picks the hyper-parameters for the next model.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::cma::CmaState;
use crate::error::Result;
use crate::rank_svm::{self, ArchiveEntry, KernelMetric, RankingModel, SurrogateHyperparams};

pub const DEFAULT_N_HAT_MAX: usize = 20;
pub const DEFAULT_LAMBDA_HYP: usize = 20;
/// Ranking error at and above which the surrogate is not used.
pub const ERROR_THRESHOLD: f64 = 0.45;
/// Weight of the newest measurement in the running model-error average.
pub const DEFAULT_ERROR_SMOOTHING: f64 = 0.2;
/// Standard deviation of the hyper-parameter sampler, as a fraction of each range.
const SAMPLER_STD: f64 = 1.0 / 6.0;
const MAX_REJECTIONS: usize = 100;

/// Source of true objective values.
pub trait Objective {
    fn evaluate(&mut self, x: &DVector<f64>) -> Result<f64>;
}

impl<F> Objective for F
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    fn evaluate(&mut self, x: &DVector<f64>) -> Result<f64> {
        self(x)
    }
}

/// Truncated normal search distribution over the unit-scaled hyper-parameter box.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperSampler {
    mean: [f64; 5],
    std: f64,
}

impl HyperSampler {
    pub fn centred_at(hp: &SurrogateHyperparams) -> Self {
        Self {
            mean: hp.to_unit(),
            std: SAMPLER_STD,
        }
    }

    pub fn mean(&self) -> SurrogateHyperparams {
        SurrogateHyperparams::from_unit(self.mean)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SurrogateHyperparams {
        let u = std::array::from_fn(|i| {
            for _ in 0..MAX_REJECTIONS {
                let v = self.mean[i] + self.std * rng.sample::<f64, _>(StandardNormal);
                if (0.0..=1.0).contains(&v) {
                    return v;
                }
            }
            self.mean[i]
        });
        SurrogateHyperparams::from_unit(u)
    }

    pub fn recentre(&mut self, hp: &SurrogateHyperparams) {
        self.mean = hp.to_unit();
    }
}

/// Outcome of one hyper-parameter tournament.
#[derive(Clone, Debug, PartialEq)]
pub struct TournamentReport {
    pub candidates: Vec<SurrogateHyperparams>,
    /// Ranking error per candidate; `∞` for candidates that could not be trained.
    pub errors: Vec<f64>,
    pub models_trained: usize,
    pub winner: Option<usize>,
    pub training_time: Duration,
}

/// What happened during one [`SurrogateController::cycle`].
#[derive(Clone, Debug, Default)]
pub struct CycleReport {
    pub true_evaluations: usize,
    pub surrogate_generations: usize,
    /// Whether a surrogate was trained for this cycle.
    pub surrogate_active: bool,
    pub model_error: Option<f64>,
    /// True fitness values of this cycle's true generation.
    pub fitness: Vec<f64>,
    pub trainings: usize,
    pub training_time: Duration,
}

#[derive(Clone, Debug)]
pub struct SurrogateController {
    n_hat: usize,
    n_hat_max: usize,
    err_last: Option<f64>,
    err_smoothed: Option<f64>,
    error_smoothing: f64,
    g_start: u64,
    archive: Vec<ArchiveEntry>,
    hp_current: SurrogateHyperparams,
    sampler: HyperSampler,
    lambda_hyp: usize,
    enabled: bool,
    adapt: bool,
    lifelengths: Vec<usize>,
    trainings: u64,
    training_time: Duration,
}

impl SurrogateController {
    /// Surrogate assistance from generation `g_start` on, with default settings.
    pub fn new(g_start: u64) -> Self {
        let hp = SurrogateHyperparams::default();
        Self {
            n_hat: 0,
            n_hat_max: DEFAULT_N_HAT_MAX,
            err_last: None,
            err_smoothed: None,
            error_smoothing: DEFAULT_ERROR_SMOOTHING,
            g_start,
            archive: Vec::new(),
            hp_current: hp,
            sampler: HyperSampler::centred_at(&hp),
            lambda_hyp: DEFAULT_LAMBDA_HYP,
            enabled: true,
            adapt: true,
            lifelengths: Vec::new(),
            trainings: 0,
            training_time: Duration::ZERO,
        }
    }

    /// A controller that never uses a surrogate: plain CMA-ES generations.
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::new(0)
        }
    }

    pub fn with_lambda_hyp(mut self, lambda_hyp: usize) -> Self {
        self.lambda_hyp = lambda_hyp.max(1);
        self
    }

    pub fn with_hyper_adaptation(mut self, adapt: bool) -> Self {
        self.adapt = adapt;
        self
    }

    pub fn with_hyperparams(mut self, hp: SurrogateHyperparams) -> Self {
        self.hp_current = hp;
        self.sampler.recentre(&hp);
        self
    }

    pub fn with_n_hat_max(mut self, n_hat_max: usize) -> Self {
        self.n_hat_max = n_hat_max;
        self.n_hat = self.n_hat.min(n_hat_max);
        self
    }

    /// Weight in `(0, 1]` of the newest error in the running average that
    /// drives `n̂`; 1 uses the latest error alone.
    pub fn with_error_smoothing(mut self, weight: f64) -> Self {
        self.error_smoothing = weight.clamp(f64::MIN_POSITIVE, 1.0);
        self
    }

    pub fn n_hat(&self) -> usize {
        self.n_hat
    }

    pub fn set_n_hat(&mut self, n_hat: usize) {
        self.n_hat = n_hat.min(self.n_hat_max);
    }

    pub fn n_hat_max(&self) -> usize {
        self.n_hat_max
    }

    pub fn err_last(&self) -> Option<f64> {
        self.err_last
    }

    /// Running average of the model error that sets `n̂`.
    pub fn err_smoothed(&self) -> Option<f64> {
        self.err_smoothed
    }

    pub fn g_start(&self) -> u64 {
        self.g_start
    }

    pub fn lambda_hyp(&self) -> usize {
        self.lambda_hyp
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn archive(&self) -> &[ArchiveEntry] {
        &self.archive
    }

    pub fn hyperparams(&self) -> &SurrogateHyperparams {
        &self.hp_current
    }

    pub fn sampler(&self) -> &HyperSampler {
        &self.sampler
    }

    /// `n̂` in effect at the start of every surrogate-assisted cycle so far.
    pub fn lifelength_history(&self) -> &[usize] {
        &self.lifelengths
    }

    pub fn mean_lifelength(&self) -> f64 {
        if self.lifelengths.is_empty() {
            0.0
        } else {
            self.lifelengths.iter().sum::<usize>() as f64 / self.lifelengths.len() as f64
        }
    }

    pub fn trainings(&self) -> u64 {
        self.trainings
    }

    pub fn training_time(&self) -> Duration {
        self.training_time
    }

    /// `n̂ = ⌊n̂_max · max(0, e_thr − err) / e_thr⌋`.
    pub fn update_lifelength(&mut self, err: f64) -> usize {
        let err = err.clamp(0.0, 1.0);
        let frac = (ERROR_THRESHOLD - err).max(0.0) / ERROR_THRESHOLD;
        self.n_hat = ((self.n_hat_max as f64 * frac).floor() as usize).min(self.n_hat_max);
        self.err_last = Some(err);
        self.n_hat
    }

    fn train_timed(&mut self, points: &[DVector<f64>], hp: &SurrogateHyperparams, metric: &KernelMetric) -> (Result<RankingModel>, Duration) {
        let start = Instant::now();
        let model = rank_svm::train(points, hp, metric);
        let elapsed = start.elapsed();
        self.trainings += 1;
        self.training_time += elapsed;
        (model, elapsed)
    }

    fn train_on(&mut self, archive: &[ArchiveEntry], hp: &SurrogateHyperparams, cma: &CmaState) -> (Result<RankingModel>, Duration) {
        let points = match rank_svm::build_training_set(archive, cma.dim(), hp) {
            Ok(set) => set.into_iter().map(|e| e.point).collect::<Vec<_>>(),
            Err(e) => return (Err(e), Duration::ZERO),
        };
        let metric = match KernelMetric::from_eigen(cma.eigen_basis(), cma.axis_scales()) {
            Ok(m) => m,
            Err(e) => return (Err(e), Duration::ZERO),
        };
        self.train_timed(&points, hp, &metric)
    }

    /// Runs one cycle: `n̂` surrogate generations followed by one true generation.
    pub fn cycle<O, R>(&mut self, cma: &mut CmaState, objective: &mut O, rng: &mut R) -> Result<CycleReport>
    where
        O: Objective + ?Sized,
        R: Rng + ?Sized,
    {
        let mut report = CycleReport::default();
        let eligible = self.enabled && cma.generation() >= self.g_start && self.archive.len() >= 2;

        let mut model = None;
        if eligible {
            let hp = self.hp_current;
            let archive = std::mem::take(&mut self.archive);
            let (trained, elapsed) = self.train_on(&archive, &hp, cma);
            self.archive = archive;
            report.trainings += 1;
            report.training_time += elapsed;
            model = trained.ok();
        }

        if let Some(model) = &model {
            report.surrogate_active = true;
            self.lifelengths.push(self.n_hat);
            for _ in 0..self.n_hat {
                let candidates = cma.ask(rng)?;
                let scores = candidates.iter().map(|c| model.predict(&c.x)).collect::<Result<Vec<_>>>()?;
                cma.tell(&candidates, &scores)?;
                report.surrogate_generations += 1;
            }
        }

        let candidates = cma.ask(rng)?;
        let predicted = match &model {
            Some(m) => Some(candidates.iter().map(|c| m.predict(&c.x)).collect::<Result<Vec<_>>>()?),
            None => None,
        };
        let mut fitness = Vec::with_capacity(candidates.len());
        for c in &candidates {
            fitness.push(objective.evaluate(&c.x)?);
        }
        cma.tell(&candidates, &fitness)?;
        let first_index = cma.eval_count() + 1;
        cma.record_evaluations(&candidates, &fitness);
        report.true_evaluations = candidates.len();

        let start = self.archive.len();
        for (k, (c, &f)) in candidates.iter().zip(&fitness).enumerate() {
            self.archive.push(ArchiveEntry {
                point: c.x.clone(),
                fitness: f,
                eval_index: first_index + k as u64,
            });
        }

        if let Some(predicted) = predicted {
            let err = rank_svm::ranking_error(&predicted, &fitness)?;
            report.model_error = Some(err);
            let smoothed = match self.err_smoothed {
                Some(prev) => (1.0 - self.error_smoothing) * prev + self.error_smoothing * err,
                None => err,
            };
            self.err_smoothed = Some(smoothed);
            self.update_lifelength(smoothed);
            self.err_last = Some(err);
            if self.adapt {
                let last_gen = self.archive[start..].to_vec();
                let tournament = self.adapt_hyperparams(cma, &last_gen, rng);
                report.trainings += tournament.models_trained;
                report.training_time += tournament.training_time;
            }
        }
        report.fitness = fitness;
        Ok(report)
    }

    /// Samples `λ_hyp` hyper-parameter vectors, trains one model per vector on
    /// the archive without `last_gen`, and keeps the vector whose model ranks
    /// `last_gen` best. Ties go to the earliest sample.
    pub fn adapt_hyperparams<R: Rng + ?Sized>(&mut self, cma: &CmaState, last_gen: &[ArchiveEntry], rng: &mut R) -> TournamentReport {
        let excluded: HashSet<u64> = last_gen.iter().map(|e| e.eval_index).collect();
        let history: Vec<ArchiveEntry> = self
            .archive
            .iter()
            .filter(|e| !excluded.contains(&e.eval_index))
            .cloned()
            .collect();
        let points: Vec<DVector<f64>> = last_gen.iter().map(|e| e.point.clone()).collect();
        let truth: Vec<f64> = last_gen.iter().map(|e| e.fitness).collect();

        let candidates: Vec<SurrogateHyperparams> = (0..self.lambda_hyp).map(|_| self.sampler.sample(rng)).collect();
        let mut report = TournamentReport {
            candidates: candidates.clone(),
            errors: Vec::with_capacity(candidates.len()),
            models_trained: 0,
            winner: None,
            training_time: Duration::ZERO,
        };
        if history.len() < 2 || last_gen.len() < 2 {
            report.errors = vec![f64::INFINITY; candidates.len()];
            return report;
        }

        for hp in &candidates {
            let (model, elapsed) = self.train_on(&history, hp, cma);
            report.training_time += elapsed;
            let err = match model {
                Ok(m) => {
                    report.models_trained += 1;
                    m.model_error(&points, &truth).unwrap_or(f64::INFINITY)
                }
                Err(_) => f64::INFINITY,
            };
            report.errors.push(err);
        }

        let mut winner: Option<usize> = None;
        for (i, e) in report.errors.iter().enumerate() {
            if e.is_finite() && winner.is_none_or(|w| *e < report.errors[w]) {
                winner = Some(i);
            }
        }
        if let Some(w) = winner {
            self.hp_current = candidates[w];
            self.sampler.recentre(&candidates[w]);
        }
        report.winner = winner;
        report
    }
}
