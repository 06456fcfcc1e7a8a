//! Experiment driver and analytics over completed trial records.

pub mod ecdf;
pub mod ert;
pub mod records;
pub mod runner;
pub mod timing;
