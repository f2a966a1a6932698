//! Newline-delimited training log: a header line, then one record per update.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRAINLOG_FORMAT: &str = "cmaze-trainlog";
pub const TRAINLOG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub ablation: String,
    pub seed: u64,
    pub tasks: Vec<String>,
    pub budgets: Vec<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRecord {
    /// Environment steps taken so far, after this update.
    pub step: u64,
    pub task: usize,
    pub rollout_steps: usize,
    pub episodes_finished: usize,
    /// Mean reward sum over episodes finished in this rollout; 0 if none.
    pub mean_episode_reward: f64,
    pub mean_step_reward: f64,
    pub entropy: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub l1_loss: f64,
    pub diversity_loss: f64,
    pub disc_loss: f64,
    pub gated_fraction: f64,
    pub skipped_minibatches: usize,
    /// Periodic evaluation over tasks seen so far.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nsd: Option<f64>,
}

pub struct TrainLogWriter {
    out: BufWriter<File>,
}

impl TrainLogWriter {
    pub fn create(path: &Path, header: &LogHeader) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", serde_json::to_string(header).expect("header serializes"))?;
        Ok(TrainLogWriter { out })
    }

    /// Rewrites `path` keeping the header and records up to `step`, then
    /// appends from there.
    pub fn resume(path: &Path, step: u64) -> Result<Self> {
        let (header, records) = read_trainlog(path)?;
        let mut w = Self::create(path, &header)?;
        for r in records.iter().filter(|r| r.step <= step) {
            w.append(r)?;
        }
        Ok(w)
    }

    pub fn append(&mut self, r: &LogRecord) -> Result<()> {
        writeln!(self.out, "{}", serde_json::to_string(r).expect("record serializes"))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_trainlog(path: &Path) -> Result<(LogHeader, Vec<LogRecord>)> {
    let f = BufReader::new(File::open(path)?);
    parse_trainlog(f)
}

pub fn parse_trainlog<R: BufRead>(r: R) -> Result<(LogHeader, Vec<LogRecord>)> {
    let mut lines = r.lines();
    let first = lines.next().ok_or_else(|| Error::Format("empty training log".into()))??;
    let header: LogHeader =
        serde_json::from_str(&first).map_err(|e| Error::Format(format!("training log header: {e}")))?;
    if header.format != TRAINLOG_FORMAT || header.version != TRAINLOG_VERSION {
        return Err(Error::Format(format!(
            "not a training log (format {} v{})",
            header.format, header.version
        )));
    }
    let mut records: Vec<LogRecord> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LogRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("training log line {}: {e}", i + 2)))?;
        if records.last().is_some_and(|p| p.step > rec.step) {
            return Err(Error::Format(format!("training log line {}: step went backwards", i + 2)));
        }
        records.push(rec);
    }
    Ok((header, records))
}
