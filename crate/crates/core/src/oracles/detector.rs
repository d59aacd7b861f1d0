//! Idealized canary detectors: a model that answers the membership query
//! perfectly, up to a symmetric flip probability.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Oracle, OracleCall, OracleError, SignalPair};
use crate::error::{Error, Result};
use crate::mechanisms::EmbeddingVector;
use crate::rng::AuditRng;

fn default_classes() -> Vec<String> {
    vec!["yes".into(), "no".into()]
}

fn default_no_index() -> usize {
    1
}

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanaryDetectorConfig {
    /// Probability that an answer is flipped, in `[0, 0.5]`.
    #[serde(default)]
    pub flip_probability: f64,
    #[serde(default = "default_classes")]
    pub classes: Vec<String>,
    #[serde(default)]
    pub yes_index: usize,
    #[serde(default = "default_no_index")]
    pub no_index: usize,
}

impl Default for CanaryDetectorConfig {
    fn default() -> Self {
        CanaryDetectorConfig {
            flip_probability: 0.0,
            classes: default_classes(),
            yes_index: 0,
            no_index: 1,
        }
    }
}

impl CanaryDetectorConfig {
    pub fn with_flip(flip_probability: f64) -> Self {
        CanaryDetectorConfig {
            flip_probability,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.flip_probability) {
            return Err(Error::config(format!(
                "flip_probability must lie in [0, 0.5], got {}",
                self.flip_probability
            )));
        }
        let n = self.classes.len();
        if self.yes_index >= n || self.no_index >= n || self.yes_index == self.no_index {
            return Err(Error::config(format!(
                "yes/no indices ({}, {}) invalid for {n} classes",
                self.yes_index, self.no_index
            )));
        }
        Ok(())
    }

    /// Draws the flip coin unconditionally so the random stream does not
    /// depend on the answer.
    fn maybe_flip(&self, truth: bool, rng: &mut AuditRng) -> bool {
        let u: f64 = rng.random();
        truth ^ (u < self.flip_probability)
    }
}

/// Votes "yes" iff the canary is in the partition.
#[derive(Clone, Debug)]
pub struct CanaryDetector {
    config: CanaryDetectorConfig,
}

impl CanaryDetector {
    pub fn new(config: CanaryDetectorConfig) -> Result<Self> {
        config.validate()?;
        Ok(CanaryDetector { config })
    }

    pub fn config(&self) -> &CanaryDetectorConfig {
        &self.config
    }
}

impl Oracle for CanaryDetector {
    type Response = usize;

    fn respond(&self, call: &OracleCall<'_>, rng: &mut AuditRng) -> Result<usize, OracleError> {
        let yes = self.config.maybe_flip(call.canary_present(), rng);
        Ok(if yes {
            self.config.yes_index
        } else {
            self.config.no_index
        })
    }
}

/// Emits `y1`'s embedding iff the canary is in the partition, `y0`'s
/// otherwise, and a fair coin between the two on zero-shot calls.
#[derive(Clone, Debug)]
pub struct CanaryEmbeddingDetector {
    config: CanaryDetectorConfig,
    pair: SignalPair,
}

impl CanaryEmbeddingDetector {
    pub fn new(config: CanaryDetectorConfig, pair: SignalPair) -> Result<Self> {
        config.validate()?;
        Ok(CanaryEmbeddingDetector { config, pair })
    }

    pub fn pair(&self) -> &SignalPair {
        &self.pair
    }
}

impl Oracle for CanaryEmbeddingDetector {
    type Response = EmbeddingVector;

    fn respond(
        &self,
        call: &OracleCall<'_>,
        rng: &mut AuditRng,
    ) -> Result<EmbeddingVector, OracleError> {
        let truth = if call.is_zero_shot() {
            rng.random::<bool>()
        } else {
            call.canary_present()
        };
        let member = self.config.maybe_flip(truth, rng);
        Ok(self.pair.embedding(member).clone())
    }
}
