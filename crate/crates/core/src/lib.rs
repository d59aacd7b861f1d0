//! Empirical privacy auditing for differentially private in-context learning.
//!
//! The crate implements the two aggregation mechanisms used to privatize
//! in-context learning (noisy vote histograms for classification and noisy
//! mean embeddings for generation), membership-inference audits against them,
//! and the conversion of attack error rates into Gaussian-DP and (ε, δ)
//! lower bounds.
//!
//! Module map:
//!
//! * [`stats`]: normal CDF/quantile and one-sided Clopper–Pearson bounds.
//! * [`gdp`]: μ lower bounds and GDP ↔ (ε, δ) conversion.
//! * [`mechanisms`]: partitioning, private voting, embedding-space aggregation.
//! * [`oracles`]: clean per-partition responses (simulated, replayed or external).
//! * [`audit`]: decision rules, threshold sweep, bootstrap audit, reports.
//! * [`gaussian_model`]: closed-form rates for the idealized Gaussian vote channel.

pub mod audit;
pub mod error;
pub mod gaussian_model;
pub mod gdp;
pub mod mechanisms;
pub mod oracles;
mod parallel;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use stats::{CountPair, Probability};
