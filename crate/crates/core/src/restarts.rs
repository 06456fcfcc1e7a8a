//! IPOP restarts: run until a termination criterion fires, double λ, repeat
//! until the evaluation budget is spent or the final target is hit.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cma::{default_lambda, CmaParams, CmaState, FitnessHistory, TerminationReason};
use crate::error::{Error, Result};
use crate::harness::records::{Event, TrialRecord};
use crate::surrogate::{SurrogateController, DEFAULT_LAMBDA_HYP};
use crate::testbed::ProblemInstance;

pub const DEFAULT_TARGET: f64 = 1e-8;
/// Initial mean is drawn uniformly from `[−INIT_BOX, INIT_BOX]^D`.
pub const INIT_BOX: f64 = 4.0;
pub const INITIAL_SIGMA: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    /// IPOP active CMA-ES.
    ActiveCma,
    /// IPOP self-adaptive surrogate-assisted active CMA-ES.
    SurrogateActiveCma,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::ActiveCma => "acma",
            Algorithm::SurrogateActiveCma => "saacm",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "acma" => Ok(Algorithm::ActiveCma),
            "saacm" => Ok(Algorithm::SurrogateActiveCma),
            other => Err(Error::Config(format!("unknown algorithm '{other}' (expected acma or saacm)"))),
        }
    }
}

/// Generation at which the surrogate is switched on in a given restart.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GStartRule {
    /// `5·(i_restart + 1)`
    Noisy,
    /// Always 10.
    Default,
}

impl GStartRule {
    pub fn g_start(self, restart: usize) -> u64 {
        match self {
            GStartRule::Noisy => 5 * (restart as u64 + 1),
            GStartRule::Default => 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestartPolicy {
    pub algorithm: Algorithm,
    /// Maximum number of true evaluations.
    pub budget: u64,
    /// Population size of the first run; the default rule when `None`.
    pub lambda0: Option<usize>,
    pub lambda_mult: usize,
    pub g_start_rule: GStartRule,
    pub target_delta: f64,
    /// Divide c_1 and c_mu by five.
    pub noisy_rates: bool,
    pub lambda_hyp: usize,
    pub adapt_hyperparams: bool,
}

impl RestartPolicy {
    /// Settings used for an instance: noisy learning rates and the noisy
    /// `g_start` rule whenever the instance is noisy; budget `10⁶·D`.
    pub fn for_instance(algorithm: Algorithm, instance: &ProblemInstance) -> Self {
        let noisy = instance.noise.is_noisy();
        Self {
            algorithm,
            budget: 1_000_000 * instance.dim as u64,
            lambda0: None,
            lambda_mult: 2,
            g_start_rule: if noisy { GStartRule::Noisy } else { GStartRule::Default },
            target_delta: DEFAULT_TARGET,
            noisy_rates: noisy,
            lambda_hyp: DEFAULT_LAMBDA_HYP,
            adapt_hyperparams: true,
        }
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let lambda0 = self.lambda0.unwrap_or_else(|| default_lambda(dim));
        if self.budget < lambda0 as u64 {
            return Err(Error::Config(format!("budget {} is smaller than lambda0 {lambda0}", self.budget)));
        }
        if self.lambda_mult < 2 {
            return Err(Error::Config("lambda_mult must be >= 2".into()));
        }
        Ok(())
    }
}

/// One run between two restarts.
#[derive(Clone, Debug, PartialEq)]
pub struct RestartSummary {
    pub lambda: usize,
    pub g_start: u64,
    pub generations: u64,
    pub evaluations: u64,
    pub termination: Option<TerminationReason>,
    pub mean_lifelength: f64,
    pub surrogate_cycles: usize,
    pub trainings: u64,
    pub training_time: Duration,
}

#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub record: TrialRecord,
    pub restarts: Vec<RestartSummary>,
}

impl TrialOutcome {
    /// Time-average of `n̂` over all surrogate-assisted cycles of the trial.
    pub fn mean_lifelength(&self) -> f64 {
        let cycles: usize = self.restarts.iter().map(|r| r.surrogate_cycles).sum();
        if cycles == 0 {
            return 0.0;
        }
        self.restarts
            .iter()
            .map(|r| r.mean_lifelength * r.surrogate_cycles as f64)
            .sum::<f64>()
            / cycles as f64
    }

    pub fn trainings(&self) -> u64 {
        self.restarts.iter().map(|r| r.trainings).sum()
    }

    pub fn training_time(&self) -> Duration {
        self.restarts.iter().map(|r| r.training_time).sum()
    }
}

/// Independent random streams of a trial: optimizer and noise.
fn trial_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut opt = ChaCha8Rng::seed_from_u64(seed);
    opt.set_stream(1);
    let mut noise = ChaCha8Rng::seed_from_u64(seed);
    noise.set_stream(2);
    (opt, noise)
}

pub fn run_ipop(instance: &ProblemInstance, policy: &RestartPolicy, seed: u64) -> Result<TrialRecord> {
    run_ipop_detailed(instance, policy, seed).map(|o| o.record)
}

/// Runs one IPOP trial and returns the record plus per-restart details.
pub fn run_ipop_detailed(instance: &ProblemInstance, policy: &RestartPolicy, seed: u64) -> Result<TrialOutcome> {
    policy.validate(instance.dim)?;
    let dim = instance.dim;
    let lambda0 = policy.lambda0.unwrap_or_else(|| default_lambda(dim));
    let (mut rng, mut noise_rng) = trial_rngs(seed);

    let mut total_evals: u64 = 0;
    let mut best_delta = f64::INFINITY;
    let mut events: Vec<Event> = Vec::new();
    let mut restarts: Vec<RestartSummary> = Vec::new();
    let mut success = false;

    'restarts: for restart in 0.. {
        let lambda = lambda0 * policy.lambda_mult.pow(restart as u32);
        if total_evals + lambda as u64 > policy.budget {
            break;
        }
        let params = CmaParams::builder(dim)
            .lambda(lambda)
            .active(true)
            .noisy_rates(policy.noisy_rates)
            .build()?;
        let mean = DVector::from_fn(dim, |_, _| rng.random_range(-INIT_BOX..=INIT_BOX));
        let mut cma = CmaState::new(params, mean, INITIAL_SIGMA)?;
        let g_start = policy.g_start_rule.g_start(restart);
        let mut ctrl = match policy.algorithm {
            Algorithm::ActiveCma => SurrogateController::disabled(),
            Algorithm::SurrogateActiveCma => SurrogateController::new(g_start)
                .with_lambda_hyp(policy.lambda_hyp)
                .with_hyper_adaptation(policy.adapt_hyperparams),
        };
        let mut history = FitnessHistory::new(dim, lambda);
        let mut summary = RestartSummary {
            lambda,
            g_start,
            generations: 0,
            evaluations: 0,
            termination: None,
            mean_lifelength: 0.0,
            surrogate_cycles: 0,
            trainings: 0,
            training_time: Duration::ZERO,
        };

        let finish = |summary: &mut RestartSummary, ctrl: &SurrogateController, cma: &CmaState| {
            summary.generations = cma.generation();
            summary.evaluations = cma.eval_count();
            summary.mean_lifelength = ctrl.mean_lifelength();
            summary.surrogate_cycles = ctrl.lifelength_history().len();
            summary.trainings = ctrl.trainings();
            summary.training_time = ctrl.training_time();
        };

        loop {
            if total_evals + lambda as u64 > policy.budget {
                finish(&mut summary, &ctrl, &cma);
                restarts.push(summary);
                break 'restarts;
            }
            let mut objective = |x: &DVector<f64>| -> Result<f64> {
                total_evals += 1;
                let delta = instance.delta_f(x);
                if delta < best_delta {
                    best_delta = delta;
                    events.push(Event {
                        eval_index: total_evals,
                        delta_f: delta,
                    });
                }
                Ok(instance.evaluate_noisy(x, &mut noise_rng))
            };
            let report = ctrl.cycle(&mut cma, &mut objective, &mut rng)?;
            history.record(&report.fitness);

            if best_delta <= policy.target_delta {
                success = true;
                finish(&mut summary, &ctrl, &cma);
                restarts.push(summary);
                break 'restarts;
            }
            if let Some(reason) = cma.should_terminate(&history) {
                summary.termination = Some(reason);
                finish(&mut summary, &ctrl, &cma);
                restarts.push(summary);
                break;
            }
        }
    }

    let record = TrialRecord {
        function_id: instance.function_id,
        instance_id: instance.instance_id,
        dim,
        seed,
        algorithm: policy.algorithm,
        events,
        total_evals,
        restarts_used: restarts.len().saturating_sub(1) as u32,
        success,
    };
    Ok(TrialOutcome { record, restarts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbed::make_instance;

    #[test]
    fn g_start_rules() {
        let seq: Vec<u64> = (0..4).map(|i| GStartRule::Noisy.g_start(i)).collect();
        assert_eq!(seq, vec![5, 10, 15, 20]);
        assert_eq!(GStartRule::Default.g_start(3), 10);
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in [Algorithm::ActiveCma, Algorithm::SurrogateActiveCma] {
            assert_eq!(a.to_string().parse::<Algorithm>().unwrap(), a);
        }
        assert!("cmaes".parse::<Algorithm>().is_err());
    }

    #[test]
    fn population_doubles_across_restarts() {
        // Rastrigin restarts often; a small budget keeps it quick.
        let inst = make_instance(15, 5, 1).unwrap();
        let policy = RestartPolicy::for_instance(Algorithm::ActiveCma, &inst).with_budget(20_000);
        let out = run_ipop_detailed(&inst, &policy, 3).unwrap();
        assert!(out.restarts.len() >= 3, "only {} restarts", out.restarts.len());
        for (i, r) in out.restarts.iter().enumerate() {
            assert_eq!(r.lambda, 8 << i);
        }
        assert!(out.record.total_evals <= 20_000);
    }

    #[test]
    fn noisy_policy_uses_noisy_g_start() {
        let inst = make_instance(101, 5, 1).unwrap();
        let policy = RestartPolicy::for_instance(Algorithm::SurrogateActiveCma, &inst);
        assert_eq!(policy.g_start_rule, GStartRule::Noisy);
        assert!(policy.noisy_rates);
        assert_eq!(policy.budget, 5_000_000);
        let clean = make_instance(1, 5, 1).unwrap();
        assert_eq!(RestartPolicy::for_instance(Algorithm::ActiveCma, &clean).g_start_rule, GStartRule::Default);
    }

    #[test]
    fn budget_is_respected_and_events_improve() {
        let inst = make_instance(110, 5, 2).unwrap();
        let policy = RestartPolicy::for_instance(Algorithm::SurrogateActiveCma, &inst).with_budget(3_000);
        let rec = run_ipop(&inst, &policy, 11).unwrap();
        assert!(rec.total_evals <= 3_000);
        assert!(rec.events.windows(2).all(|w| w[1].delta_f < w[0].delta_f && w[1].eval_index > w[0].eval_index));
        assert_eq!(rec.success, rec.events.iter().any(|e| e.delta_f <= 1e-8));
    }

    #[test]
    fn trial_is_reproducible() {
        let inst = make_instance(101, 3, 1).unwrap();
        let policy = RestartPolicy::for_instance(Algorithm::SurrogateActiveCma, &inst).with_budget(1_500);
        let a = run_ipop(&inst, &policy, 5).unwrap();
        let b = run_ipop(&inst, &policy, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_budget_below_population() {
        let inst = make_instance(1, 5, 1).unwrap();
        let policy = RestartPolicy::for_instance(Algorithm::ActiveCma, &inst).with_budget(4);
        assert!(matches!(run_ipop(&inst, &policy, 1), Err(Error::Config(_))));
    }
}
