//! Bootstrapped empirical cumulative distribution of runtimes over
//! (trial, target) pairs.

use rand::Rng;

use crate::harness::records::TrialRecord;

pub const N_TARGETS: usize = 50;
/// Cap on the number of chained runs for one bootstrap sample.
pub const MAX_CHAIN: usize = 100;

/// Fifty targets evenly spaced in log scale from `10^2` down to `10^-8`.
pub fn log_targets() -> Vec<f64> {
    (0..N_TARGETS)
        .map(|k| 10f64.powf(2.0 - 10.0 * k as f64 / (N_TARGETS - 1) as f64))
        .collect()
}

/// Step curve: `proportion` of pairs solved within `evals_per_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct EcdfCurve {
    /// `(evals / D, proportion)`, strictly increasing in x.
    pub points: Vec<(f64, f64)>,
    pub n_pairs: usize,
}

impl EcdfCurve {
    fn from_runtimes(mut solved: Vec<f64>, n_pairs: usize) -> Self {
        solved.sort_by(f64::total_cmp);
        let mut points: Vec<(f64, f64)> = Vec::new();
        for (i, &x) in solved.iter().enumerate() {
            let y = (i + 1) as f64 / n_pairs as f64;
            match points.last_mut() {
                Some(last) if last.0 == x => last.1 = y,
                _ => points.push((x, y)),
            }
        }
        Self { points, n_pairs }
    }

    pub fn proportion_at(&self, evals_per_dim: f64) -> f64 {
        let idx = self.points.partition_point(|&(x, _)| x <= evals_per_dim);
        if idx == 0 {
            0.0
        } else {
            self.points[idx - 1].1
        }
    }

    pub fn final_proportion(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.1)
    }
}

/// Runtime of one pair, chaining failed runs: the evaluations of a failed run
/// are added and another run is drawn uniformly until one reaches the target
/// or `MAX_CHAIN` runs were used.
fn chained_runtime<R: Rng + ?Sized>(records: &[TrialRecord], start: usize, target: f64, rng: &mut R) -> Option<f64> {
    let mut spent = 0.0;
    let mut current = start;
    for _ in 0..MAX_CHAIN {
        let r = &records[current];
        match r.first_hit(target) {
            Some(at) => return Some(spent + at as f64),
            None => spent += r.total_evals as f64,
        }
        current = rng.random_range(0..records.len());
    }
    None
}

/// With `bootstrap_n == 0` every pair is counted once without resampling.
/// Otherwise each pair is sampled `bootstrap_n` times with chaining.
pub fn ecdf_bootstrap<R: Rng + ?Sized>(
    records: &[TrialRecord],
    targets: &[f64],
    bootstrap_n: usize,
    rng: &mut R,
) -> EcdfCurve {
    let mut solved = Vec::new();
    let mut n_pairs = 0;
    if bootstrap_n == 0 {
        for r in records {
            for &t in targets {
                n_pairs += 1;
                if let Some(at) = r.first_hit(t) {
                    solved.push(at as f64 / r.dim as f64);
                }
            }
        }
        return EcdfCurve::from_runtimes(solved, n_pairs);
    }
    for (i, r) in records.iter().enumerate() {
        for &t in targets {
            for _ in 0..bootstrap_n {
                n_pairs += 1;
                if let Some(evals) = chained_runtime(records, i, t, rng) {
                    solved.push(evals / r.dim as f64);
                }
            }
        }
    }
    EcdfCurve::from_runtimes(solved, n_pairs)
}
