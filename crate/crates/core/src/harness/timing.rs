//! CPU cost per true evaluation and per surrogate training across dimensions.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::restarts::{run_ipop_detailed, Algorithm, RestartPolicy};
use crate::testbed::make_instance;

/// Noiseless sphere, Rosenbrock, ellipsoid and Rastrigin.
pub const TIMING_FUNCTIONS: [u32; 4] = [1, 8, 10, 15];

#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub dim: usize,
    pub evaluations: u64,
    pub trainings: u64,
    pub secs_per_eval: f64,
    /// Zero when the variant never trains a model.
    pub secs_per_training: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
    /// Least-squares slope of log(secs per training) against log(D).
    pub training_slope: Option<f64>,
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

/// Runs one trial per timing function and dimension with a budget of
/// `budget_per_dim · D` evaluations and hyper-parameter adaptation disabled.
pub fn timing_experiment(dims: &[usize], variant: Algorithm, budget_per_dim: u64) -> Result<TimingReport> {
    if dims.is_empty() {
        return Err(Error::Config("timing needs at least one dimension".into()));
    }
    let mut rows = Vec::with_capacity(dims.len());
    for &dim in dims {
        let mut evaluations = 0;
        let mut trainings = 0;
        let mut training_secs = 0.0;
        let mut total_secs = 0.0;
        for &fid in &TIMING_FUNCTIONS {
            let instance = make_instance(fid, dim, 1)?;
            let mut policy = RestartPolicy::for_instance(variant, &instance).with_budget(budget_per_dim * dim as u64);
            policy.adapt_hyperparams = false;
            let start = Instant::now();
            let outcome = run_ipop_detailed(&instance, &policy, 1)?;
            total_secs += start.elapsed().as_secs_f64();
            evaluations += outcome.record.total_evals;
            trainings += outcome.trainings();
            training_secs += outcome.training_time().as_secs_f64();
        }
        rows.push(TimingRow {
            dim,
            evaluations,
            trainings,
            secs_per_eval: total_secs / evaluations.max(1) as f64,
            secs_per_training: if trainings > 0 {
                training_secs / trainings as f64
            } else {
                0.0
            },
        });
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.dim as f64, r.secs_per_training)).collect();
    Ok(TimingReport {
        training_slope: log_log_slope(&pts),
        rows,
    })
}
