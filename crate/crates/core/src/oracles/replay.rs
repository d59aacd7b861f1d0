use std::collections::HashMap;
use std::path::Path;

use super::{read_records, Oracle, OracleCall, OracleError, OracleRecord, RecordResponse};
use crate::error::{Error, Result};
use crate::mechanisms::Hypothesis;
use crate::rng::AuditRng;

/// Answers calls from previously recorded responses.
#[derive(Clone, Debug)]
pub struct ReplayOracle<R> {
    responses: HashMap<(Hypothesis, u64, usize), R>,
}

impl<R: RecordResponse> ReplayOracle<R> {
    pub fn from_records(records: &[OracleRecord]) -> Result<Self> {
        let mut responses = HashMap::with_capacity(records.len());
        for rec in records {
            let r = R::from_value(&rec.response).ok_or_else(|| {
                Error::config(format!("record {:?} has the wrong response type", rec.key()))
            })?;
            responses.insert(rec.key(), r);
        }
        Ok(ReplayOracle { responses })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_records(&read_records(path)?)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl<R> Oracle for ReplayOracle<R>
where
    R: RecordResponse + Clone + Send + Sync,
{
    type Response = R;

    fn respond(&self, call: &OracleCall<'_>, _rng: &mut AuditRng) -> Result<R, OracleError> {
        let missing = || OracleError::Missing {
            ctx: call.hypothesis.as_str(),
            trial: call.trial,
            part: call.partition,
        };
        let part = call.partition.ok_or_else(missing)?;
        self.responses
            .get(&(call.hypothesis, call.trial, part))
            .cloned()
            .ok_or_else(missing)
    }
}
