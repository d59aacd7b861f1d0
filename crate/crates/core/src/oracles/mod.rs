//! Sources of clean, noise-free per-partition responses.
//!
//! An oracle stands in for "prompt the model with one partition plus the
//! audit query". Simulated detectors, replayed recordings and external
//! responders all implement [`Oracle`]; [`collect`] drives any of them through
//! the partition-and-query pipeline.

mod collect;
mod detector;
mod external;
mod records;
mod replay;
mod signal;
mod templates;

use thiserror::Error;

use crate::mechanisms::{Exemplar, Hypothesis};
use crate::rng::AuditRng;

pub use collect::{collect, resample, CallFailure, CollectOptions, Collection, Row};
pub use detector::{CanaryDetector, CanaryDetectorConfig, CanaryEmbeddingDetector};
pub use external::{
    batch_requests, write_batch_requests, DecodeSettings, ExternalEmbeddingOracle,
    ExternalVoteOracle, FileBatchTransport, HttpTransport, PromptBuilder, ResponderRequest,
    ResponderResponse, Transport,
};
pub use records::{read_records, write_records, OracleRecord, RecordResponse, RecordValue};
pub use replay::ReplayOracle;
pub use signal::{SignalPair, SignalPreset};
pub use templates::TemplateId;

/// Failure of a single oracle call.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("unparseable response {0:?}")]
    Parse(String),
    #[error("no recorded response for {ctx} trial {trial} partition {part:?}")]
    Missing {
        ctx: &'static str,
        trial: u64,
        part: Option<usize>,
    },
    #[error("batch responses pending: {0}")]
    Pending(String),
    #[error("template: {0}")]
    Template(String),
}

/// The audit query: which canary to ask about and how to phrase it.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditQuery {
    pub canary: Exemplar,
    pub template: TemplateId,
}

impl AuditQuery {
    pub fn new(canary: Exemplar, template: TemplateId) -> Self {
        AuditQuery { canary, template }
    }
}

/// One oracle invocation.
#[derive(Clone, Copy, Debug)]
pub struct OracleCall<'a> {
    pub hypothesis: Hypothesis,
    pub trial: u64,
    /// `None` for zero-shot calls made without any exemplars.
    pub partition: Option<usize>,
    pub subset: &'a [Exemplar],
    pub query: &'a AuditQuery,
}

impl OracleCall<'_> {
    pub fn is_zero_shot(&self) -> bool {
        self.partition.is_none()
    }

    pub fn canary_present(&self) -> bool {
        self.subset.contains(&self.query.canary)
    }
}

/// Maps one prompt to one clean response.
///
/// Implementations must be deterministic given the call and the state of
/// `rng`; the collector seeds `rng` from the call coordinates.
pub trait Oracle: Sync {
    type Response: RecordResponse + Clone + Send + Sync;

    fn respond(
        &self,
        call: &OracleCall<'_>,
        rng: &mut AuditRng,
    ) -> Result<Self::Response, OracleError>;
}

impl<O: Oracle + ?Sized> Oracle for &O {
    type Response = O::Response;

    fn respond(
        &self,
        call: &OracleCall<'_>,
        rng: &mut AuditRng,
    ) -> Result<Self::Response, OracleError> {
        (**self).respond(call, rng)
    }
}
