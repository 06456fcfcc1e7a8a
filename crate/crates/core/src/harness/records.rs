//! Trial records and their line-oriented CSV representation.
//!
//! Every improvement event is one `event` row; each trial ends with a
//! `trial` summary row carrying the same key columns. Floats are written
//! with 17 significant digits so that parsing restores them exactly.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::restarts::Algorithm;

pub const HEADER: [&str; 11] = [
    "kind",
    "function_id",
    "instance_id",
    "dim",
    "seed",
    "algorithm",
    "eval_index",
    "delta_f",
    "total_evals",
    "restarts_used",
    "success",
];

/// An improvement of the best noise-free Δf seen so far.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    /// 1-based index of the true evaluation within the trial.
    pub eval_index: u64,
    pub delta_f: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub function_id: u32,
    pub instance_id: u32,
    pub dim: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    /// Strictly decreasing in `delta_f`, strictly increasing in `eval_index`.
    pub events: Vec<Event>,
    pub total_evals: u64,
    pub restarts_used: u32,
    pub success: bool,
}

impl TrialRecord {
    /// Evaluations spent until Δf first dropped to `target`, if ever.
    pub fn first_hit(&self, target: f64) -> Option<u64> {
        self.events.iter().find(|e| e.delta_f <= target).map(|e| e.eval_index)
    }

    pub fn best_delta(&self) -> f64 {
        self.events.last().map_or(f64::INFINITY, |e| e.delta_f)
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = self
            .events
            .windows(2)
            .all(|w| w[1].delta_f < w[0].delta_f && w[1].eval_index > w[0].eval_index);
        if !ordered {
            return Err(Error::InvalidParams("events must be strictly improving and eval-ordered".into()));
        }
        if let Some(last) = self.events.last() {
            if self.total_evals < last.eval_index {
                return Err(Error::InvalidParams(format!(
                    "total_evals {} precedes last event at {}",
                    self.total_evals, last.eval_index
                )));
            }
        }
        Ok(())
    }
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Streams records as CSV, writing the header before the first record.
pub struct RecordWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(sink: W) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
        inner.write_record(HEADER)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, rec: &TrialRecord) -> Result<()> {
        let key = [
            rec.function_id.to_string(),
            rec.instance_id.to_string(),
            rec.dim.to_string(),
            rec.seed.to_string(),
            rec.algorithm.to_string(),
        ];
        for e in &rec.events {
            let mut row = vec!["event".to_string()];
            row.extend(key.iter().cloned());
            row.extend([e.eval_index.to_string(), float(e.delta_f), String::new(), String::new(), String::new()]);
            self.inner.write_record(&row)?;
        }
        let mut row = vec!["trial".to_string()];
        row.extend(key.iter().cloned());
        row.extend([
            String::new(),
            float(rec.best_delta()),
            rec.total_evals.to_string(),
            rec.restarts_used.to_string(),
            rec.success.to_string(),
        ]);
        self.inner.write_record(&row)?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

pub fn write_records<W: Write>(sink: W, records: &[TrialRecord]) -> Result<W> {
    let mut w = RecordWriter::new(sink)?;
    for r in records {
        w.write(r)?;
    }
    w.into_inner()
}

pub fn emit(records: &[TrialRecord]) -> Result<String> {
    let bytes = write_records(Vec::new(), records)?;
    String::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        message: e.to_string(),
    })
}

type Key = (u32, u32, usize, u64, Algorithm);

fn field<T: std::str::FromStr>(row: &csv::StringRecord, idx: usize, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = row.get(idx).unwrap_or("");
    raw.parse().map_err(|e: T::Err| Error::Parse {
        line,
        message: format!("column {}: '{raw}': {e}", HEADER[idx]),
    })
}

fn key_of(row: &csv::StringRecord, line: usize) -> Result<Key> {
    let algo: String = field(row, 5, line)?;
    let algorithm = algo.parse().map_err(|_| Error::Parse {
        line,
        message: format!("unknown algorithm '{algo}'"),
    })?;
    Ok((field(row, 1, line)?, field(row, 2, line)?, field(row, 3, line)?, field(row, 4, line)?, algorithm))
}

pub fn read_records<R: Read>(source: R) -> Result<Vec<TrialRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let header = reader.headers()?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: "unexpected header".into(),
        });
    }
    let mut out = Vec::new();
    let mut pending: Option<(Key, Vec<Event>)> = None;
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row?;
        let key = key_of(&row, line)?;
        if let Some((k, _)) = &pending {
            if *k != key {
                return Err(Error::Parse {
                    line,
                    message: "events of a trial must precede its summary row".into(),
                });
            }
        }
        match row.get(0) {
            Some("event") => {
                let ev = Event {
                    eval_index: field(&row, 6, line)?,
                    delta_f: field(&row, 7, line)?,
                };
                pending.get_or_insert_with(|| (key, Vec::new())).1.push(ev);
            }
            Some("trial") => {
                let events = pending.take().map(|(_, e)| e).unwrap_or_default();
                let (function_id, instance_id, dim, seed, algorithm) = key;
                let rec = TrialRecord {
                    function_id,
                    instance_id,
                    dim,
                    seed,
                    algorithm,
                    events,
                    total_evals: field(&row, 8, line)?,
                    restarts_used: field(&row, 9, line)?,
                    success: field(&row, 10, line)?,
                };
                rec.validate().map_err(|e| Error::Parse {
                    line,
                    message: e.to_string(),
                })?;
                out.push(rec);
            }
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown row kind {other:?}"),
                })
            }
        }
    }
    if pending.is_some() {
        return Err(Error::Parse {
            line: 0,
            message: "trailing events without a summary row".into(),
        });
    }
    Ok(out)
}

pub fn parse(text: &str) -> Result<Vec<TrialRecord>> {
    read_records(text.as_bytes())
}
