//! Trial batteries over (function, dimension, instance) keys.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::mpsc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::records::{RecordWriter, TrialRecord};
use crate::restarts::{run_ipop, Algorithm, RestartPolicy};
use crate::testbed::{make_instance, splitmix64};

pub const DEFAULT_INSTANCES: u32 = 15;
pub const DEFAULT_BUDGET_MULT: f64 = 1e4;
pub const MAX_BUDGET_MULT: f64 = 1e6;

pub const CONFIG_KEYS: [&str; 6] = ["functions", "dims", "instances", "algo", "budget_mult", "seed"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub functions: Vec<u32>,
    pub dims: Vec<usize>,
    /// Instances `1..=instances` are run for every function and dimension.
    pub instances: u32,
    pub algorithm: Algorithm,
    /// Evaluation budget per trial is `budget_mult · D`.
    pub budget_mult: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            functions: vec![101],
            dims: vec![5],
            instances: DEFAULT_INSTANCES,
            algorithm: Algorithm::SurrogateActiveCma,
            budget_mult: DEFAULT_BUDGET_MULT,
            seed: 1,
        }
    }
}

/// Parses `"1,8,101-106"` into `[1, 8, 101, …, 106]`.
pub fn parse_id_list<T>(raw: &str) -> Result<Vec<T>>
where
    T: std::str::FromStr + Copy + Into<u64> + TryFrom<u64>,
{
    let bad = || Error::Config(format!("malformed list '{raw}'"));
    let mut out = Vec::new();
    for part in raw.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((lo, hi)) => {
                let lo: T = lo.trim().parse().map_err(|_| bad())?;
                let hi: T = hi.trim().parse().map_err(|_| bad())?;
                let (lo, hi) = (lo.into(), hi.into());
                if lo > hi {
                    return Err(bad());
                }
                for v in lo..=hi {
                    out.push(T::try_from(v).map_err(|_| bad())?);
                }
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

impl RunConfig {
    /// Sets one key; `Ok(false)` when the key is unknown.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let value = value.trim();
        match key.trim() {
            "functions" => self.functions = parse_id_list::<u32>(value)?,
            "dims" => {
                self.dims = parse_id_list::<u64>(value)?.into_iter().map(|d| d as usize).collect();
            }
            "instances" => {
                self.instances = value
                    .parse()
                    .map_err(|_| Error::Config(format!("instances: '{value}' is not a count")))?;
            }
            "algo" => self.algorithm = value.parse()?,
            "budget_mult" => {
                self.budget_mult = value
                    .parse()
                    .map_err(|_| Error::Config(format!("budget_mult: '{value}' is not a number")))?;
            }
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("seed: '{value}' is not an integer")))?;
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Applies line-oriented `key=value` pairs; `#` starts a comment.
    /// All unknown keys are reported together.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        let mut unknown = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{line}'", n + 1)))?;
            if !self.set(key, value)? {
                unknown.push(key.trim().to_string());
            }
        }
        if !unknown.is_empty() {
            return Err(Error::Config(format!(
                "unknown configuration keys: {} (valid keys: {})",
                unknown.join(", "),
                CONFIG_KEYS.join(", ")
            )));
        }
        self.validate()
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.functions.is_empty() || self.dims.is_empty() {
            return Err(Error::Config("functions and dims must be non-empty".into()));
        }
        if self.instances == 0 {
            return Err(Error::Config("instances must be >= 1".into()));
        }
        if !(self.budget_mult > 0.0 && self.budget_mult <= MAX_BUDGET_MULT) {
            return Err(Error::Config(format!("budget_mult must lie in (0, {MAX_BUDGET_MULT:e}]")));
        }
        for &f in &self.functions {
            for &d in &self.dims {
                make_instance(f, d, 1).map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn budget(&self, dim: usize) -> u64 {
        (self.budget_mult * dim as f64).floor() as u64
    }

    /// Trial keys in file order.
    pub fn keys(&self) -> Vec<TrialKey> {
        let mut keys = Vec::new();
        for &function_id in &self.functions {
            for &dim in &self.dims {
                for instance_id in 1..=self.instances {
                    keys.push(TrialKey {
                        function_id,
                        dim,
                        instance_id,
                    });
                }
            }
        }
        keys.sort();
        keys.dedup();
        keys
    }

    pub fn trial_seed(&self, key: &TrialKey) -> u64 {
        let mut h = splitmix64(self.seed);
        h = splitmix64(h ^ key.function_id as u64);
        h = splitmix64(h ^ key.dim as u64);
        splitmix64(h ^ key.instance_id as u64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrialKey {
    pub function_id: u32,
    pub dim: usize,
    pub instance_id: u32,
}

pub fn run_trial(config: &RunConfig, key: &TrialKey) -> Result<TrialRecord> {
    let instance = make_instance(key.function_id, key.dim, key.instance_id)?;
    let policy = RestartPolicy::for_instance(config.algorithm, &instance).with_budget(config.budget(key.dim));
    run_ipop(&instance, &policy, config.trial_seed(key))
}

/// Runs every trial on the rayon pool. Records reach `on_record` in key
/// order as soon as all earlier keys are complete.
pub fn run_trials_with<F>(config: &RunConfig, mut on_record: F) -> Result<Vec<TrialRecord>>
where
    F: FnMut(&TrialRecord) -> Result<()>,
{
    config.validate()?;
    let keys = config.keys();
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        let keys = &keys;
        scope.spawn(move || {
            keys.par_iter().enumerate().for_each_with(tx, |tx, (i, key)| {
                let _ = tx.send((i, run_trial(config, key)));
            });
        });
        let mut ready: BTreeMap<usize, TrialRecord> = BTreeMap::new();
        let mut out = Vec::with_capacity(keys.len());
        let mut failure = None;
        for (i, res) in rx {
            match res {
                Ok(rec) => {
                    ready.insert(i, rec);
                }
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
            while let Some(rec) = ready.remove(&out.len()) {
                if failure.is_none() {
                    if let Err(e) = on_record(&rec) {
                        failure = Some(e);
                    }
                }
                out.push(rec);
            }
        }
        match failure {
            Some(e) => Err(e),
            None => Ok(out),
        }
    })
}

pub fn run_trials(config: &RunConfig) -> Result<Vec<TrialRecord>> {
    run_trials_with(config, |_| Ok(()))
}

pub fn run_trials_to<W: Write>(config: &RunConfig, sink: W) -> Result<Vec<TrialRecord>> {
    let mut writer = RecordWriter::new(sink)?;
    let records = run_trials_with(config, |rec| writer.write(rec))?;
    writer.into_inner()?;
    Ok(records)
}
