//! Newline-delimited trajectory log.
//!
//! The first line is a header object `{"format":"maze-trajlog","version":1,...}`;
//! every following line is one [`TrajRecord`].

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRAJLOG_FORMAT: &str = "maze-trajlog";
pub const TRAJLOG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajHeader {
    pub format: String,
    pub version: u32,
    /// Maze names in task order.
    pub tasks: Vec<String>,
}

/// State after step `t`, the action that produced it and its reward. The
/// `t = 0` record is the reset state with zero action and reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajRecord {
    pub task: usize,
    pub episode: usize,
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub a: f64,
    pub omega: f64,
    pub r: f64,
}

pub fn write_trajlog<W: Write>(mut w: W, tasks: &[String], records: &[TrajRecord]) -> Result<()> {
    let header = TrajHeader {
        format: TRAJLOG_FORMAT.into(),
        version: TRAJLOG_VERSION,
        tasks: tasks.to_vec(),
    };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r).expect("record serializes"))?;
    }
    Ok(())
}

pub fn read_trajlog<R: BufRead>(r: R) -> Result<(TrajHeader, Vec<TrajRecord>)> {
    let mut lines = r.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Format("empty trajectory log".into()))??;
    let header: TrajHeader =
        serde_json::from_str(&first).map_err(|e| Error::Format(format!("trajectory log header: {e}")))?;
    if header.format != TRAJLOG_FORMAT || header.version != TRAJLOG_VERSION {
        return Err(Error::Format(format!(
            "not a trajectory log (format {} v{})",
            header.format, header.version
        )));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("trajectory log line {}: {e}", i + 2)))?,
        );
    }
    Ok((header, records))
}
