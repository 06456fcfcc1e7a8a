//! Self-adaptive surrogate-assisted active CMA-ES (saACM-ES) with IPOP restarts,
//! a noisy black-box testbed and benchmarking analytics (ERT, bootstrapped ECDF,
//! CPU timing).
//!
//! The crate is organized bottom-up:
//!
//! * [`cma`]: the (μ/μ_w, λ) active CMA-ES generation engine.
//! * [`rank_svm`]: the comparison-based surrogate (Ranking SVM with a
//!   covariance-induced RBF kernel) and its ranking-error measure.
//! * [`surrogate`]: the surrogate-assisted generation cycle and the online
//!   hyper-parameter tournament.
//! * [`restarts`]: the IPOP restart wrapper producing a [`TrialRecord`].
//! * [`testbed`]: noisy benchmark functions f101–f130 plus noiseless timing bases.
//! * [`harness`]: trial batteries, record files, ERT, ECDF and timing.

pub mod cma;
pub mod error;
pub mod harness;
pub mod rank_svm;
pub mod restarts;
pub mod surrogate;
pub mod testbed;

pub use cma::{Candidate, CmaParams, CmaState, FitnessHistory, TerminationReason};
pub use error::{Error, Result};
pub use harness::records::{Event, TrialRecord};
pub use harness::{ert::ErtResult, runner::RunConfig};
pub use rank_svm::{ArchiveEntry, KernelMetric, RankingModel, SurrogateHyperparams};
pub use restarts::{Algorithm, GStartRule, RestartPolicy};
pub use surrogate::{Objective, SurrogateController};
pub use testbed::{BaseFunction, NoiseConfig, NoiseModel, ProblemInstance, Severity};
