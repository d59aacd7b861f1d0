use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::{l2_distance, EmbeddingVector};

/// The two fixed output strings of a generation audit and their embeddings.
///
/// `y1` is emitted when the canary is visible, `y0` when it is not.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalPair {
    pub y1_text: String,
    pub y0_text: String,
    pub y1_embedding: EmbeddingVector,
    pub y0_embedding: EmbeddingVector,
}

impl SignalPair {
    pub fn new(
        y1_text: impl Into<String>,
        y0_text: impl Into<String>,
        y1_embedding: EmbeddingVector,
        y0_embedding: EmbeddingVector,
    ) -> Result<Self> {
        if y1_embedding.dim() != y0_embedding.dim() {
            return Err(Error::DimensionMismatch {
                expected: y1_embedding.dim(),
                found: y0_embedding.dim(),
            });
        }
        Ok(SignalPair {
            y1_text: y1_text.into(),
            y0_text: y0_text.into(),
            y1_embedding,
            y0_embedding,
        })
    }

    /// Two unit vectors at L2 distance `distance` in `dim` dimensions:
    /// `y1 = e₀` and `y0 = cos θ·e₀ + sin θ·e₁` with `cos θ = 1 − d²/2`.
    pub fn synthetic(distance: f64, dim: usize) -> Result<Self> {
        if !(0.0..=2.0).contains(&distance) {
            return Err(Error::OutOfDomain {
                what: "signal distance",
                value: distance,
            });
        }
        let cos = 1.0 - 0.5 * distance * distance;
        let sin = (1.0 - cos * cos).max(0.0).sqrt();
        if dim == 0 || (dim == 1 && sin > 0.0) {
            return Err(Error::config(format!(
                "a signal pair at distance {distance} needs at least 2 dimensions"
            )));
        }
        let mut y1 = vec![0.0; dim];
        y1[0] = 1.0;
        let mut y0 = vec![0.0; dim];
        y0[0] = cos;
        if dim > 1 {
            y0[1] = sin;
        }
        SignalPair::new(
            "y1",
            "y0",
            EmbeddingVector::new(y1)?,
            EmbeddingVector::normalized(y0)?,
        )
    }

    pub fn l2_distance(&self) -> f64 {
        l2_distance(self.y1_embedding.components(), self.y0_embedding.components())
    }

    pub fn dim(&self) -> usize {
        self.y1_embedding.dim()
    }

    pub fn embedding(&self, member: bool) -> &EmbeddingVector {
        if member {
            &self.y1_embedding
        } else {
            &self.y0_embedding
        }
    }
}

/// A tabulated pair of signal texts and the embedding distance measured
/// between them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalPreset {
    pub name: String,
    pub y1: String,
    pub y0: String,
    pub l2_distance: f64,
}

impl SignalPreset {
    pub fn all() -> &'static [SignalPreset] {
        static TABLE: OnceLock<Vec<SignalPreset>> = OnceLock::new();
        TABLE.get_or_init(|| {
            serde_json::from_str(include_str!("../../assets/signal_pairs.json"))
                .expect("bundled signal table is valid")
        })
    }

    pub fn by_name(name: &str) -> Option<&'static SignalPreset> {
        Self::all().iter().find(|p| p.name == name)
    }

    /// Synthetic embeddings at the tabulated distance, carrying the texts.
    pub fn synthesize(&self, dim: usize) -> Result<SignalPair> {
        let mut pair = SignalPair::synthetic(self.l2_distance, dim)?;
        pair.y1_text = self.y1.clone();
        pair.y0_text = self.y0.clone();
        Ok(pair)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_pair_hits_requested_distance() {
        for &d in &[0.0, 0.1022, 0.4628, 0.5562, 0.645, 0.7476, 1.0, 2.0] {
            let pair = SignalPair::synthetic(d, 16).unwrap();
            assert!((pair.l2_distance() - d).abs() < 1e-12, "{d}");
            assert!((pair.y1_embedding.norm() - 1.0).abs() < 1e-12);
            assert!((pair.y0_embedding.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn synthetic_pair_domain() {
        assert!(SignalPair::synthetic(2.5, 4).is_err());
        assert!(SignalPair::synthetic(0.5, 1).is_err());
        assert!(SignalPair::synthetic(2.0, 1).is_ok());
    }

    #[test]
    fn preset_table() {
        let all = SignalPreset::all();
        let distances: Vec<f64> = all.iter().map(|p| p.l2_distance).collect();
        assert_eq!(distances, vec![0.7476, 0.645, 0.5562, 0.4628, 0.1022]);
        let p = SignalPreset::by_name("tune_vs_song").unwrap();
        let pair = p.synthesize(8).unwrap();
        assert_eq!(pair.y0_text, "The old clock chimed a forgotten, dusty song.");
        assert!((pair.l2_distance() - 0.1022).abs() < 1e-12);
    }
}
