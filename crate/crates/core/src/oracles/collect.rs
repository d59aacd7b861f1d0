use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use super::{AuditQuery, Oracle, OracleCall, OracleError, OracleRecord, RecordResponse};
use crate::error::{Error, Result};
use crate::mechanisms::{mean_embedding, partition, EmbeddingVector, Hypothesis, NeighboringPair, VoteVector};
use crate::parallel::with_workers;
use crate::rng::{derived_rng, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CollectOptions {
    pub seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
    pub padding: bool,
    /// Failed rows tolerated per hypothesis before giving up.
    pub max_failures: usize,
}

impl CollectOptions {
    pub fn new(seed: u64) -> Self {
        CollectOptions {
            seed,
            workers: 0,
            padding: false,
            max_failures: 0,
        }
    }
}

/// All `T` per-partition responses of one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct Row<R> {
    pub trial: u64,
    pub responses: Vec<R>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CallFailure {
    pub ctx: Hypothesis,
    pub trial: u64,
    pub partition: usize,
    pub error: OracleError,
}

/// Clean responses for both hypotheses.
#[derive(Clone, Debug, PartialEq)]
pub struct Collection<R> {
    num_partitions: usize,
    with_canary: Vec<Row<R>>,
    without_canary: Vec<Row<R>>,
    failures: Vec<CallFailure>,
}

impl<R: RecordResponse + Clone> Collection<R> {
    pub fn num_partitions(&self) -> usize {
        self.num_partitions
    }

    pub fn rows(&self, h: Hypothesis) -> &[Row<R>] {
        match h {
            Hypothesis::WithCanary => &self.with_canary,
            Hypothesis::WithoutCanary => &self.without_canary,
        }
    }

    pub fn failures(&self) -> &[CallFailure] {
        &self.failures
    }

    /// Records in canonical `(hypothesis, trial, partition)` order.
    pub fn records(&self) -> Vec<OracleRecord> {
        let mut out = Vec::new();
        for h in Hypothesis::BOTH {
            for row in self.rows(h) {
                for (part, r) in row.responses.iter().enumerate() {
                    out.push(OracleRecord {
                        ctx: h,
                        trial: row.trial,
                        partition: part,
                        response: r.to_value(),
                        metadata: String::new(),
                    });
                }
            }
        }
        out
    }

    /// Rebuilds a collection from persisted records. Every trial must carry
    /// all `num_partitions` responses of the expected type.
    pub fn from_records(records: &[OracleRecord], num_partitions: usize) -> Result<Self> {
        let mut grouped: BTreeMap<(Hypothesis, u64), BTreeMap<usize, R>> = BTreeMap::new();
        for rec in records {
            let value = R::from_value(&rec.response).ok_or_else(|| {
                Error::config(format!(
                    "record {:?} holds the wrong response type for this task",
                    rec.key()
                ))
            })?;
            if rec.partition >= num_partitions {
                return Err(Error::config(format!(
                    "record partition {} outside {num_partitions} partitions",
                    rec.partition
                )));
            }
            let slot = grouped.entry((rec.ctx, rec.trial)).or_default();
            if slot.insert(rec.partition, value).is_some() {
                return Err(Error::config(format!("duplicate record {:?}", rec.key())));
            }
        }
        let mut out = Collection {
            num_partitions,
            with_canary: Vec::new(),
            without_canary: Vec::new(),
            failures: Vec::new(),
        };
        for ((h, trial), parts) in grouped {
            if parts.len() != num_partitions {
                return Err(Error::config(format!(
                    "{} trial {trial} has {} of {num_partitions} partitions",
                    h.as_str(),
                    parts.len()
                )));
            }
            let row = Row {
                trial,
                responses: parts.into_values().collect(),
            };
            match h {
                Hypothesis::WithCanary => out.with_canary.push(row),
                Hypothesis::WithoutCanary => out.without_canary.push(row),
            }
        }
        Ok(out)
    }
}

impl Collection<usize> {
    pub fn clean_votes(&self, h: Hypothesis, num_classes: usize) -> Result<Vec<VoteVector>> {
        self.rows(h)
            .iter()
            .map(|row| VoteVector::from_votes(num_classes, &row.responses))
            .collect()
    }
}

impl Collection<EmbeddingVector> {
    /// Clean mean embedding of each row.
    pub fn clean_means(&self, h: Hypothesis) -> Result<Vec<Vec<f64>>> {
        self.rows(h)
            .iter()
            .map(|row| mean_embedding(row.responses.iter().map(EmbeddingVector::components)))
            .collect()
    }
}

fn collect_stream(h: Hypothesis) -> u64 {
    match h {
        Hypothesis::WithCanary => stream::COLLECT_WITH,
        Hypothesis::WithoutCanary => stream::COLLECT_WITHOUT,
    }
}

/// Runs the non-private partition-and-query pipeline `n_llm` times for each
/// hypothesis.
///
/// A trial whose partitions do not all answer is recorded as a failure and
/// skipped; further trials are attempted up to `max_failures` extra per
/// hypothesis. Each call draws from a generator seeded by
/// `(seed, hypothesis, trial, partition)`, so the result is independent of
/// the worker count.
pub fn collect<O: Oracle>(
    oracle: &O,
    pair: &NeighboringPair,
    query: &AuditQuery,
    num_partitions: usize,
    n_llm: usize,
    options: &CollectOptions,
) -> Result<Collection<O::Response>> {
    if n_llm == 0 {
        return Err(Error::config("n_llm must be at least 1"));
    }
    let mut out = Collection {
        num_partitions,
        with_canary: Vec::new(),
        without_canary: Vec::new(),
        failures: Vec::new(),
    };
    for h in Hypothesis::BOTH {
        let parts = partition(pair.context(h), num_partitions, options.padding)?;
        let cap = (n_llm + options.max_failures) as u64;
        let mut rows = Vec::with_capacity(n_llm);
        let mut next: u64 = 0;
        while rows.len() < n_llm && next < cap {
            let end = (next + (n_llm - rows.len()) as u64).min(cap);
            let batch: Vec<std::result::Result<Row<O::Response>, CallFailure>> =
                with_workers(options.workers, || {
                    (next..end)
                        .into_par_iter()
                        .map(|trial| run_trial(oracle, h, trial, &parts, query, options.seed))
                        .collect()
                })?;
            for r in batch {
                match r {
                    Ok(row) => rows.push(row),
                    Err(f) => {
                        log::warn!(
                            "oracle failure ({} trial {} partition {}): {}",
                            h.as_str(),
                            f.trial,
                            f.partition,
                            f.error
                        );
                        out.failures.push(f);
                    }
                }
            }
            next = end;
        }
        if rows.len() < n_llm {
            if let Some(f) = out.failures.iter().rev().find(|f| f.ctx == h) {
                if matches!(f.error, OracleError::Pending(_)) {
                    return Err(Error::Oracle(f.error.clone()));
                }
            }
            return Err(Error::InsufficientRows {
                arm: h.as_str(),
                got: rows.len(),
                need: n_llm,
            });
        }
        match h {
            Hypothesis::WithCanary => out.with_canary = rows,
            Hypothesis::WithoutCanary => out.without_canary = rows,
        }
    }
    Ok(out)
}

fn run_trial<O: Oracle>(
    oracle: &O,
    h: Hypothesis,
    trial: u64,
    parts: &[Vec<crate::mechanisms::Exemplar>],
    query: &AuditQuery,
    seed: u64,
) -> std::result::Result<Row<O::Response>, CallFailure> {
    let mut responses = Vec::with_capacity(parts.len());
    for (p, subset) in parts.iter().enumerate() {
        let mut rng = derived_rng(seed, &[collect_stream(h), trial, p as u64]);
        let call = OracleCall {
            hypothesis: h,
            trial,
            partition: Some(p),
            subset,
            query,
        };
        match oracle.respond(&call, &mut rng) {
            Ok(r) => responses.push(r),
            Err(error) => {
                return Err(CallFailure {
                    ctx: h,
                    trial,
                    partition: p,
                    error,
                })
            }
        }
    }
    Ok(Row { trial, responses })
}

/// Uniform draw with replacement.
pub fn resample<'a, T, R: Rng + ?Sized>(items: &'a [T], rng: &mut R) -> Result<&'a T> {
    if items.is_empty() {
        return Err(Error::Empty("resampling pool"));
    }
    Ok(&items[rng.random_range(0..items.len())])
}
