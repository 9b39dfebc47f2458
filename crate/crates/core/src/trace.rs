//! Closed-loop trace logs: newline-delimited JSON, one record per control
//! cycle. The same format feeds the conformance checkers back.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cube::Valuation;
use crate::ipn::{Concset, IOWord, Ipn, Marking};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub cycle: u64,
    pub inputs: BTreeMap<String, bool>,
    /// Transition ids with multiplicity as repetition; empty for a wait.
    pub step: Vec<String>,
    pub outputs: BTreeMap<String, bool>,
    /// Marking after the step, zero entries omitted.
    pub marking: BTreeMap<String, u32>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("record {index}: {msg}")]
    Model { index: usize, msg: String },
}

pub fn write_ndjson<W: Write>(mut w: W, records: &[TraceRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_ndjson<R: BufRead>(r: R) -> Result<Vec<TraceRecord>, TraceError> {
    let mut records = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| TraceError::Json {
            line: i + 1,
            source,
        })?;
        records.push(record);
    }
    Ok(records)
}

/// The I/O word a trace denotes: one (inputs, outputs) letter per cycle.
pub fn to_io_word(ipn: &Ipn, records: &[TraceRecord]) -> Result<IOWord, TraceError> {
    let mut pairs = Vec::new();
    for (index, r) in records.iter().enumerate() {
        let i = Valuation::from_map(ipn.inputs(), &r.inputs)
            .map_err(|msg| TraceError::Model { index, msg })?;
        let o = Valuation::from_map(ipn.outputs(), &r.outputs)
            .map_err(|msg| TraceError::Model { index, msg })?;
        pairs.push((i, o));
    }
    Ok(IOWord { pairs })
}

/// The step concsets and post-step markings of a trace, for replay checks.
pub fn to_steps(ipn: &Ipn, records: &[TraceRecord]) -> Result<Vec<(Concset, Marking)>, TraceError> {
    records
        .iter()
        .enumerate()
        .map(|(index, r)| {
            let c = ipn
                .concset_from_ids(&r.step)
                .map_err(|e| TraceError::Model {
                    index,
                    msg: e.to_string(),
                })?;
            let m = ipn
                .marking_from_map(&r.marking)
                .map_err(|e| TraceError::Model {
                    index,
                    msg: e.to_string(),
                })?;
            Ok((c, m))
        })
        .collect()
}
