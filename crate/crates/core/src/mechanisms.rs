//! The two private aggregation mechanisms under audit.
//!
//! Private voting partitions the exemplars, collects one label per partition,
//! adds Gaussian noise to every class count and releases the noisy argmax.
//! Embedding-space aggregation (ESA) averages one output embedding per
//! partition, perturbs the mean and releases the nearest zero-shot candidate.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One input/output demonstration.
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Exemplar {
    pub input: String,
    #[serde(default)]
    pub output: String,
}

impl Exemplar {
    pub fn new(input: impl Into<String>, output: impl Into<String>) -> Self {
        Exemplar {
            input: input.into(),
            output: output.into(),
        }
    }
}

impl fmt::Display for Exemplar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.output.is_empty() {
            f.write_str(&self.input)
        } else {
            write!(f, "Input: {}\nOutput: {}", self.input, self.output)
        }
    }
}

/// Ordered exemplars, optionally marking where the canary sits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarContext {
    exemplars: Vec<Exemplar>,
    canary_index: Option<usize>,
}

impl ExemplarContext {
    pub fn new(exemplars: Vec<Exemplar>, canary_index: Option<usize>) -> Result<Self> {
        if let Some(i) = canary_index {
            if i >= exemplars.len() {
                return Err(Error::config(format!(
                    "canary index {i} outside a context of {} exemplars",
                    exemplars.len()
                )));
            }
        }
        Ok(ExemplarContext {
            exemplars,
            canary_index,
        })
    }

    pub fn exemplars(&self) -> &[Exemplar] {
        &self.exemplars
    }

    pub fn canary_index(&self) -> Option<usize> {
        self.canary_index
    }

    pub fn canary(&self) -> Option<&Exemplar> {
        self.canary_index.map(|i| &self.exemplars[i])
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }
}

/// Which of the two neighboring contexts a response belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    #[serde(rename = "with")]
    WithCanary,
    #[serde(rename = "without")]
    WithoutCanary,
}

impl Hypothesis {
    pub const BOTH: [Hypothesis; 2] = [Hypothesis::WithCanary, Hypothesis::WithoutCanary];

    pub fn as_str(self) -> &'static str {
        match self {
            Hypothesis::WithCanary => "with",
            Hypothesis::WithoutCanary => "without",
        }
    }
}

/// The adjacency unit: a context holding the canary and one without it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighboringPair {
    with_canary: ExemplarContext,
    without_canary: ExemplarContext,
}

impl NeighboringPair {
    /// Validates that the contexts differ by exactly the canary, either by
    /// insertion (C₀ is C₁ minus the canary) or by replacement (same length,
    /// one differing position).
    pub fn new(with_canary: ExemplarContext, without_canary: ExemplarContext) -> Result<Self> {
        let idx = with_canary
            .canary_index
            .ok_or_else(|| Error::config("the canary-present context has no canary index"))?;
        let with = &with_canary.exemplars;
        let without = &without_canary.exemplars;
        let neighbors = if with.len() == without.len() + 1 {
            with[..idx] == without[..idx] && with[idx + 1..] == without[idx..]
        } else if with.len() == without.len() {
            let diffs: Vec<usize> = (0..with.len()).filter(|&i| with[i] != without[i]).collect();
            diffs == [idx]
        } else {
            false
        };
        if !neighbors {
            return Err(Error::config(
                "contexts must differ in exactly one exemplar (the canary)",
            ));
        }
        if without.contains(&with[idx]) {
            return Err(Error::config("the reference context also contains the canary"));
        }
        Ok(NeighboringPair {
            with_canary,
            without_canary,
        })
    }

    /// C₁ = base with the canary inserted at `index`; C₀ = base.
    pub fn by_insertion(base: Vec<Exemplar>, canary: Exemplar, index: usize) -> Result<Self> {
        if index > base.len() {
            return Err(Error::config(format!(
                "canary index {index} outside a context of {} exemplars",
                base.len()
            )));
        }
        let mut with = base.clone();
        with.insert(index, canary);
        NeighboringPair::new(
            ExemplarContext::new(with, Some(index))?,
            ExemplarContext::new(base, None)?,
        )
    }

    /// C₁ = base with `base[index]` replaced by the canary; C₀ = base.
    pub fn by_replacement(base: Vec<Exemplar>, canary: Exemplar, index: usize) -> Result<Self> {
        if index >= base.len() {
            return Err(Error::config(format!(
                "canary index {index} outside a context of {} exemplars",
                base.len()
            )));
        }
        let mut with = base.clone();
        with[index] = canary;
        NeighboringPair::new(
            ExemplarContext::new(with, Some(index))?,
            ExemplarContext::new(base, None)?,
        )
    }

    pub fn with_canary(&self) -> &ExemplarContext {
        &self.with_canary
    }

    pub fn without_canary(&self) -> &ExemplarContext {
        &self.without_canary
    }

    pub fn context(&self, h: Hypothesis) -> &ExemplarContext {
        match h {
            Hypothesis::WithCanary => &self.with_canary,
            Hypothesis::WithoutCanary => &self.without_canary,
        }
    }

    pub fn canary(&self) -> &Exemplar {
        self.with_canary.canary().expect("validated on construction")
    }
}

/// Clean per-class vote counts from `T` partitions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VoteVector {
    counts: Vec<u64>,
}

impl VoteVector {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Empty("vote vector"));
        }
        Ok(VoteVector { counts })
    }

    /// Tallies one label per partition.
    pub fn from_votes(num_classes: usize, votes: &[usize]) -> Result<Self> {
        let mut counts = vec![0u64; num_classes];
        for &v in votes {
            *counts.get_mut(v).ok_or_else(|| {
                Error::config(format!("vote {v} outside {num_classes} classes"))
            })? += 1;
        }
        VoteVector::new(counts)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    /// T, the number of partitions that voted.
    pub fn num_partitions(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn argmax(&self) -> usize {
        argmax(self.counts.iter().map(|&c| c as f64))
    }
}

/// A vote vector after Gaussian perturbation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyVoteVector {
    pub values: Vec<f64>,
    pub sigma: f64,
}

impl NoisyVoteVector {
    pub fn argmax(&self) -> usize {
        argmax(self.values.iter().copied())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut iter = values.into_iter().enumerate();
    let Some((_, mut best_val)) = iter.next() else {
        return 0;
    };
    let mut best = 0;
    for (i, v) in iter {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// A real vector with L2 norm at most one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

/// Slack on the unit-norm check for vectors built from rounded components.
const NORM_SLACK: f64 = 1e-9;

impl EmbeddingVector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Empty("embedding"));
        }
        if let Some(&bad) = components.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(bad));
        }
        let norm = l2_norm(&components);
        if norm > 1.0 + NORM_SLACK {
            return Err(Error::OutOfDomain {
                what: "embedding norm",
                value: norm,
            });
        }
        Ok(EmbeddingVector(components))
    }

    /// Scales to unit length. Zero vectors are rejected.
    pub fn normalized(components: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&components);
        if !norm.is_finite() {
            return Err(Error::NonFinite(norm));
        }
        if norm == 0.0 {
            return Err(Error::OutOfDomain {
                what: "embedding norm",
                value: 0.0,
            });
        }
        EmbeddingVector::new(components.into_iter().map(|v| v / norm).collect())
    }

    /// Scales down only when the norm exceeds one.
    pub fn clipped(components: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&components);
        if norm > 1.0 {
            EmbeddingVector::new(components.into_iter().map(|v| v / norm).collect())
        } else {
            EmbeddingVector::new(components)
        }
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        EmbeddingVector::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(e: EmbeddingVector) -> Vec<f64> {
        e.0
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// L2 sensitivity used to calibrate the noise.
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMode {
    /// Δ = 2, the vote-histogram bound (also what the ESA pseudocode uses).
    PaperVoting,
    /// Δ = 2/T, the tight bound for a mean of unit vectors.
    EsaTight,
    /// Δ = 1, the older ESA bound.
    EsaLegacy,
}

impl SensitivityMode {
    pub fn sensitivity(self, num_partitions: usize) -> f64 {
        match self {
            SensitivityMode::PaperVoting => 2.0,
            SensitivityMode::EsaTight => esa_sensitivity(num_partitions),
            SensitivityMode::EsaLegacy => 1.0,
        }
    }
}

fn default_pool_size() -> usize {
    10
}

/// Budget and shape of one mechanism instance.
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismConfig {
    pub eps_theory: f64,
    pub delta: f64,
    pub num_partitions: usize,
    pub sensitivity_mode: SensitivityMode,
    #[serde(default = "default_pool_size")]
    pub candidate_pool_size: usize,
    /// Multiplies σ by √2, matching the textbook Gaussian-mechanism calibration.
    #[serde(default)]
    pub classic_calibration: bool,
    /// Pad contexts smaller than T by repeating non-canary exemplars.
    #[serde(default)]
    pub padding: bool,
}

impl MechanismConfig {
    pub fn new(eps_theory: f64, delta: f64, num_partitions: usize, mode: SensitivityMode) -> Self {
        MechanismConfig {
            eps_theory,
            delta,
            num_partitions,
            sensitivity_mode: mode,
            candidate_pool_size: default_pool_size(),
            classic_calibration: false,
            padding: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_theory.is_finite() && self.eps_theory > 0.0) {
            return Err(Error::config(format!(
                "eps_theory must be positive, got {}",
                self.eps_theory
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.num_partitions < 2 {
            return Err(Error::config(format!(
                "num_partitions must be at least 2, got {}",
                self.num_partitions
            )));
        }
        if self.candidate_pool_size == 0 {
            return Err(Error::config("candidate_pool_size must be positive"));
        }
        Ok(())
    }

    fn calibration_factor(&self) -> f64 {
        if self.classic_calibration {
            std::f64::consts::SQRT_2
        } else {
            1.0
        }
    }

    /// σ for the private-voting mechanism.
    pub fn voting_sigma(&self) -> f64 {
        voting_noise_scale(self.eps_theory, self.delta) * self.calibration_factor()
    }

    /// σ for ESA under the configured sensitivity.
    pub fn esa_sigma(&self) -> f64 {
        esa_noise_scale(self) * self.calibration_factor()
    }
}

/// Splits the context into `T` disjoint subsets, exemplar `i` going to
/// subset `i mod T`.
///
/// With `padding`, contexts smaller than `T` are first extended by cycling
/// through their non-canary exemplars.
pub fn partition(
    context: &ExemplarContext,
    num_partitions: usize,
    padding: bool,
) -> Result<Vec<Vec<Exemplar>>> {
    if num_partitions == 0 {
        return Err(Error::config("number of partitions must be positive"));
    }
    let mut exemplars = context.exemplars.clone();
    if exemplars.len() < num_partitions {
        if !padding {
            return Err(Error::config(format!(
                "{} exemplars cannot fill {num_partitions} partitions (enable padding)",
                exemplars.len()
            )));
        }
        let fillers: Vec<Exemplar> = context
            .exemplars
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != context.canary_index)
            .map(|(_, e)| e.clone())
            .collect();
        if fillers.is_empty() {
            return Err(Error::config("no non-canary exemplars available for padding"));
        }
        let missing = num_partitions - exemplars.len();
        exemplars.extend(fillers.iter().cycle().take(missing).cloned());
    }
    let mut parts = vec![Vec::new(); num_partitions];
    for (i, e) in exemplars.into_iter().enumerate() {
        parts[i % num_partitions].push(e);
    }
    Ok(parts)
}

/// σ = 2·√(ln(1.25/δ))/ε.
pub fn voting_noise_scale(eps: f64, delta: f64) -> f64 {
    2.0 * (1.25 / delta).ln().sqrt() / eps
}

/// Adds independent N(0, σ²) noise to every clean count and releases the
/// argmax (lowest index on ties).
pub fn private_vote<R: Rng + ?Sized>(
    clean: &VoteVector,
    sigma: f64,
    rng: &mut R,
) -> (NoisyVoteVector, usize) {
    let values: Vec<f64> = clean
        .counts
        .iter()
        .map(|&c| c as f64 + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let noisy = NoisyVoteVector { values, sigma };
    let winner = noisy.argmax();
    (noisy, winner)
}

/// L2 sensitivity of the mean of `T` unit-norm embeddings: 2/T.
pub fn esa_sensitivity(num_partitions: usize) -> f64 {
    2.0 / num_partitions as f64
}

/// σ = Δ·√(ln(1.25/δ))/ε with Δ chosen by the sensitivity mode.
pub fn esa_noise_scale(config: &MechanismConfig) -> f64 {
    let sens = config.sensitivity_mode.sensitivity(config.num_partitions);
    sens * (1.25 / config.delta).ln().sqrt() / config.eps_theory
}

/// Coordinate-wise mean of equally sized vectors.
pub fn mean_embedding<'a, I>(embeddings: I) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut iter = embeddings.into_iter();
    let first = iter.next().ok_or(Error::Empty("embedding list"))?;
    let mut sum = first.to_vec();
    let mut n = 1usize;
    for e in iter {
        if e.len() != sum.len() {
            return Err(Error::DimensionMismatch {
                expected: sum.len(),
                found: e.len(),
            });
        }
        for (s, v) in sum.iter_mut().zip(e) {
            *s += v;
        }
        n += 1;
    }
    let inv = 1.0 / n as f64;
    sum.iter_mut().for_each(|s| *s *= inv);
    Ok(sum)
}

/// Adds N(0, σ²) to each coordinate of `mean`, in place.
pub fn perturb_mean<R: Rng + ?Sized>(mean: &mut [f64], sigma: f64, rng: &mut R) {
    for v in mean.iter_mut() {
        *v += sigma * rng.sample::<f64, _>(StandardNormal);
    }
}

/// Noisy mean embedding. The result is not re-normalized.
pub fn esa_aggregate<R: Rng + ?Sized>(
    embeddings: &[EmbeddingVector],
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut mean = mean_embedding(embeddings.iter().map(EmbeddingVector::components))?;
    perturb_mean(&mut mean, sigma, rng);
    Ok(mean)
}

/// Index of the candidate nearest to `noisy_mean` in Euclidean distance;
/// ties go to the lowest index.
pub fn esa_select(noisy_mean: &[f64], candidates: &[EmbeddingVector]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate pool"));
    }
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        if c.dim() != noisy_mean.len() {
            return Err(Error::DimensionMismatch {
                expected: noisy_mean.len(),
                found: c.dim(),
            });
        }
        let d = l2_distance(noisy_mean, c.components());
        if d < best_dist {
            best = i;
            best_dist = d;
        }
    }
    Ok(best)
}
