//! Expected running time to reach a target.

use crate::error::{Error, Result};
use crate::harness::records::TrialRecord;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErtResult {
    pub target: f64,
    /// Infinite iff `n_success == 0`.
    pub ert: f64,
    pub n_success: usize,
    pub n_trials: usize,
}

impl ErtResult {
    pub fn is_finite(&self) -> bool {
        self.n_success > 0
    }
}

/// Evaluations spent in every trial while the target was not reached, summed
/// over all trials and divided by the number of successful trials.
pub fn compute_ert(records: &[TrialRecord], target: f64) -> Result<ErtResult> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidParams("cannot compute ERT of an empty record set".into()))?;
    if records.iter().any(|r| r.function_id != first.function_id || r.dim != first.dim) {
        return Err(Error::InvalidParams("records must share function id and dimension".into()));
    }
    let mut spent: u64 = 0;
    let mut n_success = 0;
    for r in records {
        match r.first_hit(target) {
            Some(at) => {
                spent += at;
                n_success += 1;
            }
            None => spent += r.total_evals,
        }
    }
    let ert = if n_success == 0 {
        f64::INFINITY
    } else {
        spent as f64 / n_success as f64
    };
    Ok(ErtResult {
        target,
        ert,
        n_success,
        n_trials: records.len(),
    })
}

/// The default targets `10^2, 10^1, …, 10^-8`.
pub fn default_targets() -> Vec<f64> {
    (0..=10).map(|k| 10f64.powi(2 - k)).collect()
}
