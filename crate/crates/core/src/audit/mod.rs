//! The audit engine: decision rules, threshold sweep, bootstrap auditing and
//! reports.

mod bootstrap;
mod decision;
mod report;
mod sweep;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gdp::DEFAULT_DELTA_TARGET;
use crate::mechanisms::MechanismConfig;
use crate::stats::Probability;

pub use bootstrap::{
    bootstrap_audit, candidate_pool, run_audit, sample_statistics, AuditResponse, CleanResponses,
};
pub use decision::{
    decide_blackbox_classification, decide_blackbox_generation, decide_whitebox_classification,
    decide_whitebox_generation, distance_difference, vote_difference, DecisionThreshold,
};
pub use report::{AuditReport, CSV_HEADER};
pub use sweep::{sweep_threshold, SweepResult};

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Generation,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Classification => "classification",
            Task::Generation => "generation",
        }
    }
}

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThreatModel {
    /// Sees only the released label or candidate.
    BlackBox,
    /// Also sees the noisy vote vector or noisy mean embedding.
    WhiteBox,
}

impl ThreatModel {
    pub fn as_str(self) -> &'static str {
        match self {
            ThreatModel::BlackBox => "black_box",
            ThreatModel::WhiteBox => "white_box",
        }
    }
}

/// Candidate outputs for black-box generation audits.
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidatePool {
    /// Exactly `{y₁, y₀}`.
    #[default]
    SignalPair,
    /// `candidate_pool_size` zero-shot responses of the oracle.
    ZeroShot,
}

fn default_n_sample() -> usize {
    400_000
}

fn default_confidence() -> f64 {
    0.95
}

fn default_delta_target() -> f64 {
    DEFAULT_DELTA_TARGET
}

fn default_num_classes() -> usize {
    2
}

fn default_no_class() -> usize {
    1
}

/// Everything that determines an audit's result. Worker counts are not part
/// of it: they never change the output.
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub mechanism: MechanismConfig,
    pub task: Task,
    pub threat_model: ThreatModel,
    pub n_llm: usize,
    #[serde(default = "default_n_sample")]
    pub n_sample: usize,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default = "default_delta_target")]
    pub delta_target: f64,
    pub seed: u64,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    #[serde(default)]
    pub yes_class: usize,
    #[serde(default = "default_no_class")]
    pub no_class: usize,
    #[serde(default)]
    pub candidate_pool: CandidatePool,
    /// Extra failed rows tolerated per hypothesis during collection.
    #[serde(default)]
    pub max_failures: usize,
}

impl AuditConfig {
    pub fn new(
        mechanism: MechanismConfig,
        task: Task,
        threat_model: ThreatModel,
        n_llm: usize,
        seed: u64,
    ) -> Self {
        AuditConfig {
            mechanism,
            task,
            threat_model,
            n_llm,
            n_sample: default_n_sample(),
            confidence: default_confidence(),
            delta_target: default_delta_target(),
            seed,
            num_classes: default_num_classes(),
            yes_class: 0,
            no_class: default_no_class(),
            candidate_pool: CandidatePool::default(),
            max_failures: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mechanism.validate()?;
        if self.n_llm == 0 {
            return Err(Error::config("n_llm must be at least 1"));
        }
        if self.n_sample == 0 {
            return Err(Error::config("n_sample must be at least 1"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::config(format!(
                "confidence must lie in (0, 1), got {}",
                self.confidence
            )));
        }
        if !(self.delta_target > 0.0 && self.delta_target < 1.0) {
            return Err(Error::config(format!(
                "delta_target must lie in (0, 1), got {}",
                self.delta_target
            )));
        }
        if self.num_classes < 2
            || self.yes_class >= self.num_classes
            || self.no_class >= self.num_classes
            || self.yes_class == self.no_class
        {
            return Err(Error::config(format!(
                "yes/no classes ({}, {}) invalid for {} classes",
                self.yes_class, self.no_class, self.num_classes
            )));
        }
        Ok(())
    }

    pub fn confidence(&self) -> Result<Probability> {
        Probability::new(self.confidence)
    }

    pub fn delta_target(&self) -> Result<Probability> {
        Probability::new(self.delta_target)
    }

    /// Noise scale of the audited mechanism.
    pub fn sigma(&self) -> f64 {
        match self.task {
            Task::Classification => self.mechanism.voting_sigma(),
            Task::Generation => self.mechanism.esa_sigma(),
        }
    }
}

/// Serde for floats that may be infinite: non-finite values travel as the
/// strings `"inf"`, `"-inf"` and `"nan"`.
pub(crate) mod tagged_float {
    use std::fmt;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn write(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
        if v.is_nan() {
            f.write_str("nan")
        } else if v == f64::INFINITY {
            f.write_str("inf")
        } else if v == f64::NEG_INFINITY {
            f.write_str("-inf")
        } else {
            write!(f, "{v}")
        }
    }

    pub fn to_text(v: f64) -> String {
        struct W(f64);
        impl fmt::Display for W {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write(f, self.0)
            }
        }
        W(v).to_string()
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&to_text(*v))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Tag(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Tag(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(serde::de::Error::custom(format!("unknown float tag {t:?}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::SensitivityMode;

    fn config() -> AuditConfig {
        AuditConfig::new(
            MechanismConfig::new(1.0, 1e-5, 4, SensitivityMode::PaperVoting),
            Task::Classification,
            ThreatModel::WhiteBox,
            10,
            1,
        )
    }

    #[test]
    fn defaults_and_validation() {
        let c = config();
        assert_eq!(c.n_sample, 400_000);
        assert_eq!(c.confidence, 0.95);
        c.validate().unwrap();
        let mut bad = c.clone();
        bad.n_sample = 0;
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let mut bad = c.clone();
        bad.no_class = 0;
        assert!(bad.validate().is_err());
        let mut bad = c;
        bad.confidence = 1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_json_round_trip_and_unknown_keys() {
        let c = config();
        let text = serde_json::to_string(&c).unwrap();
        let back: AuditConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["bogus"] = 1.into();
        assert!(serde_json::from_value::<AuditConfig>(v).is_err());
    }

    #[test]
    fn sigma_follows_task() {
        let mut c = config();
        assert_eq!(c.sigma(), c.mechanism.voting_sigma());
        c.task = Task::Generation;
        c.mechanism.sensitivity_mode = SensitivityMode::EsaTight;
        assert!((c.sigma() * 4.0 - c.mechanism.voting_sigma()).abs() < 1e-12);
    }
}
