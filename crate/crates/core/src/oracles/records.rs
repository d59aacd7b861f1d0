//! Line-delimited JSON persistence of clean oracle responses.
//!
//! One record per line with exactly the keys `ctx`, `trial`, `part` and one
//! of `vote` / `emb`, in that order.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::{EmbeddingVector, Hypothesis};

/// A clean response: a class index or an embedding.
#[derive(Clone, Debug, PartialEq)]
pub enum RecordValue {
    Vote(usize),
    Embedding(Vec<f64>),
}

/// Conversion between an oracle's response type and its persisted form.
pub trait RecordResponse: Sized {
    fn to_value(&self) -> RecordValue;
    fn from_value(value: &RecordValue) -> Option<Self>;
}

impl RecordResponse for usize {
    fn to_value(&self) -> RecordValue {
        RecordValue::Vote(*self)
    }

    fn from_value(value: &RecordValue) -> Option<Self> {
        match value {
            RecordValue::Vote(v) => Some(*v),
            RecordValue::Embedding(_) => None,
        }
    }
}

impl RecordResponse for EmbeddingVector {
    fn to_value(&self) -> RecordValue {
        RecordValue::Embedding(self.components().to_vec())
    }

    fn from_value(value: &RecordValue) -> Option<Self> {
        match value {
            RecordValue::Embedding(v) => EmbeddingVector::new(v.clone()).ok(),
            RecordValue::Vote(_) => None,
        }
    }
}

/// One clean per-partition response.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleRecord {
    pub ctx: Hypothesis,
    pub trial: u64,
    pub partition: usize,
    pub response: RecordValue,
    /// Free-form annotation kept in memory only; never persisted.
    pub metadata: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Wire {
    ctx: Hypothesis,
    trial: u64,
    part: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vote: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emb: Option<Vec<f64>>,
}

impl OracleRecord {
    pub fn to_json_line(&self) -> Result<String> {
        let (vote, emb) = match &self.response {
            RecordValue::Vote(v) => (Some(*v), None),
            RecordValue::Embedding(e) => (None, Some(e.clone())),
        };
        let wire = Wire {
            ctx: self.ctx,
            trial: self.trial,
            part: self.partition,
            vote,
            emb,
        };
        Ok(serde_json::to_string(&wire)?)
    }

    pub fn from_json_line(line: &str) -> std::result::Result<Self, String> {
        let wire: Wire = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let response = match (wire.vote, wire.emb) {
            (Some(v), None) => RecordValue::Vote(v),
            (None, Some(e)) => RecordValue::Embedding(e),
            _ => return Err("record needs exactly one of `vote` or `emb`".into()),
        };
        Ok(OracleRecord {
            ctx: wire.ctx,
            trial: wire.trial,
            partition: wire.part,
            response,
            metadata: String::new(),
        })
    }

    /// Canonical ordering key.
    pub fn key(&self) -> (Hypothesis, u64, usize) {
        (self.ctx, self.trial, self.partition)
    }
}

/// Appends records to `path`, creating it if needed. The whole batch is
/// written with a single `write_all`.
pub fn write_records(path: &Path, records: &[OracleRecord]) -> Result<()> {
    let mut buf = String::new();
    for r in records {
        buf.push_str(&r.to_json_line()?);
        buf.push('\n');
    }
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(buf.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Reads every record of a JSONL file. Blank lines are skipped.
pub fn read_records(path: &Path) -> Result<Vec<OracleRecord>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = OracleRecord::from_json_line(&line).map_err(|reason| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        })?;
        out.push(rec);
    }
    Ok(out)
}
