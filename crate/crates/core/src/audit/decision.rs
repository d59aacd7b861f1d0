//! Membership decision rules applied to one released output.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::tagged_float;
use crate::error::{Error, Result};
use crate::mechanisms::{l2_distance, EmbeddingVector, NoisyVoteVector};
use crate::oracles::SignalPair;

/// Threshold τ of a white-box rule. `±∞` are allowed: they are the
/// always-member and never-member rules at the ends of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct DecisionThreshold {
    tau: f64,
}

impl DecisionThreshold {
    pub fn new(tau: f64) -> Result<Self> {
        if tau.is_nan() {
            return Err(Error::NonFinite(tau));
        }
        Ok(DecisionThreshold { tau })
    }

    pub const ZERO: DecisionThreshold = DecisionThreshold { tau: 0.0 };

    pub fn tau(self) -> f64 {
        self.tau
    }
}

impl fmt::Display for DecisionThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        tagged_float::write(f, self.tau)
    }
}

impl Serialize for DecisionThreshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        tagged_float::serialize(&self.tau, s)
    }
}

impl<'de> Deserialize<'de> for DecisionThreshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tau = tagged_float::deserialize(d)?;
        DecisionThreshold::new(tau).map_err(serde::de::Error::custom)
    }
}

/// Member iff the released label is the "yes" class.
pub fn decide_blackbox_classification(winner: usize, yes_class: usize) -> bool {
    winner == yes_class
}

/// Ṽ_yes − Ṽ_no, the white-box classification statistic.
pub fn vote_difference(noisy: &NoisyVoteVector, yes_class: usize, no_class: usize) -> Result<f64> {
    let n = noisy.values.len();
    if yes_class >= n || no_class >= n {
        return Err(Error::DimensionMismatch {
            expected: yes_class.max(no_class) + 1,
            found: n,
        });
    }
    Ok(noisy.values[yes_class] - noisy.values[no_class])
}

/// Member iff Ṽ_yes − Ṽ_no > τ (strict).
pub fn decide_whitebox_classification(
    noisy: &NoisyVoteVector,
    yes_class: usize,
    no_class: usize,
    tau: DecisionThreshold,
) -> Result<bool> {
    Ok(vote_difference(noisy, yes_class, no_class)? > tau.tau)
}

/// `Some(true)` for y₁, `Some(false)` for y₀, `None` for anything else.
pub(crate) fn signal_label(selected: &EmbeddingVector, pair: &SignalPair) -> Option<bool> {
    if selected == &pair.y1_embedding {
        Some(true)
    } else if selected == &pair.y0_embedding {
        Some(false)
    } else {
        None
    }
}

/// Member iff the released candidate is y₁. A candidate that is neither
/// signal counts as a non-member and is logged.
pub fn decide_blackbox_generation(selected: &EmbeddingVector, pair: &SignalPair) -> bool {
    signal_label(selected, pair).unwrap_or_else(|| {
        log::warn!("selected candidate is neither signal output; counted as non-member");
        false
    })
}

/// ‖m − emb(y₁)‖ − ‖m − emb(y₀)‖.
pub fn distance_difference(noisy_mean: &[f64], pair: &SignalPair) -> Result<f64> {
    if noisy_mean.len() != pair.dim() {
        return Err(Error::DimensionMismatch {
            expected: pair.dim(),
            found: noisy_mean.len(),
        });
    }
    Ok(l2_distance(noisy_mean, pair.y1_embedding.components())
        - l2_distance(noisy_mean, pair.y0_embedding.components()))
}

/// Member iff ‖m − emb(y₁)‖ − ‖m − emb(y₀)‖ ≤ τ.
pub fn decide_whitebox_generation(
    noisy_mean: &[f64],
    pair: &SignalPair,
    tau: DecisionThreshold,
) -> Result<bool> {
    Ok(distance_difference(noisy_mean, pair)? <= tau.tau)
}
