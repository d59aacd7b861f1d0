//! White-box threshold selection.
//!
//! Statistics are oriented so that larger means "member" and the rule is
//! `s > τ`. Candidate thresholds are −∞, every midpoint between adjacent
//! distinct pooled values, and +∞. Moving τ to the right only adds false
//! negatives and removes false positives, so
//! `Φ⁻¹(1 − β̄(FN)) − Φ⁻¹(ᾱ(FP))` over a block of candidates `[l, r]` is at
//! most its value with FN taken at `l` and FP at `r`. A branch-and-bound over
//! blocks uses that bound to skip most Clopper–Pearson evaluations while
//! still returning the exact optimum.

use std::collections::HashMap;

use super::DecisionThreshold;
use crate::error::{Error, Result};
use crate::gdp::{audit_epsilon, mu_lower_unclamped, AttackCounts, GdpEstimate};
use crate::stats::{binom_upper_bound, CountPair, Probability};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepResult {
    pub threshold: DecisionThreshold,
    pub counts: AttackCounts,
    pub estimate: GdpEstimate,
}

struct BoundCache {
    trials: u64,
    confidence: Probability,
    values: HashMap<u64, f64>,
}

impl BoundCache {
    fn new(trials: u64, confidence: Probability) -> Self {
        BoundCache {
            trials,
            confidence,
            values: HashMap::new(),
        }
    }

    fn get(&mut self, errors: u64) -> Result<f64> {
        if let Some(&v) = self.values.get(&errors) {
            return Ok(v);
        }
        let v = binom_upper_bound(CountPair::new(errors, self.trials)?, self.confidence)?.value();
        self.values.insert(errors, v);
        Ok(v)
    }
}

struct Search<'a> {
    /// `fn_at[j]`: with-arm values ≤ τ_j; `fp_at[j]`: without-arm values > τ_j.
    fn_at: &'a [u64],
    fp_at: &'a [u64],
    beta: BoundCache,
    alpha: BoundCache,
    best: f64,
    best_j: usize,
}

impl Search<'_> {
    fn mu(&mut self, fn_j: usize, fp_j: usize) -> Result<f64> {
        let b = self.beta.get(self.fn_at[fn_j])?;
        let a = self.alpha.get(self.fp_at[fp_j])?;
        Ok(mu_lower_unclamped(a, b))
    }

    fn visit(&mut self, l: usize, r: usize, bound: f64) -> Result<()> {
        if bound < self.best || (bound == self.best && l >= self.best_j) {
            return Ok(());
        }
        if l == r {
            // A leaf's bound is its exact value.
            self.best = bound;
            self.best_j = l;
            return Ok(());
        }
        let mid = l + (r - l) / 2;
        let left = self.mu(l, mid)?;
        let right = self.mu(mid + 1, r)?;
        // The more promising half first, so the incumbent rises quickly.
        if right > left {
            self.visit(mid + 1, r, right)?;
            self.visit(l, mid, left)
        } else {
            self.visit(l, mid, left)?;
            self.visit(mid + 1, r, right)
        }
    }
}

/// Picks τ maximizing the μ lower bound of the rule `s > τ` and returns it
/// with the resulting counts and estimate. Ties go to the smallest τ.
pub fn sweep_threshold(
    stats_with: &[f64],
    stats_without: &[f64],
    confidence: Probability,
    delta_target: Probability,
) -> Result<SweepResult> {
    if stats_with.is_empty() || stats_without.is_empty() {
        return Err(Error::Empty("threshold sweep statistics"));
    }
    if let Some(&v) = stats_with.iter().chain(stats_without).find(|v| v.is_nan()) {
        return Err(Error::NonFinite(v));
    }
    let mut pooled: Vec<(f64, bool)> = stats_with
        .iter()
        .map(|&v| (v, true))
        .chain(stats_without.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

    // Distinct values with per-arm multiplicities.
    let mut distinct: Vec<f64> = Vec::new();
    let mut with_counts: Vec<u64> = Vec::new();
    let mut without_counts: Vec<u64> = Vec::new();
    for (v, member) in pooled {
        if distinct.last() != Some(&v) {
            distinct.push(v);
            with_counts.push(0);
            without_counts.push(0);
        }
        let i = distinct.len() - 1;
        if member {
            with_counts[i] += 1;
        } else {
            without_counts[i] += 1;
        }
    }
    let m = distinct.len();
    let n_with = stats_with.len() as u64;
    let n_without = stats_without.len() as u64;

    // Candidate j leaves the first j distinct values at or below τ.
    let mut fn_at = Vec::with_capacity(m + 1);
    let mut fp_at = Vec::with_capacity(m + 1);
    let (mut fn_, mut below_without) = (0u64, 0u64);
    fn_at.push(0);
    fp_at.push(n_without);
    for j in 0..m {
        fn_ += with_counts[j];
        below_without += without_counts[j];
        fn_at.push(fn_);
        fp_at.push(n_without - below_without);
    }

    let mut search = Search {
        fn_at: &fn_at,
        fp_at: &fp_at,
        beta: BoundCache::new(n_with, confidence),
        alpha: BoundCache::new(n_without, confidence),
        best: f64::NEG_INFINITY,
        best_j: 0,
    };
    let root = search.mu(0, m)?;
    search.visit(0, m, root)?;
    let j = search.best_j;

    let tau = match j {
        0 => f64::NEG_INFINITY,
        j if j == m => f64::INFINITY,
        j => 0.5 * (distinct[j - 1] + distinct[j]),
    };
    let counts = AttackCounts::new(
        n_with - fn_at[j],
        fp_at[j],
        fn_at[j],
        n_without - fp_at[j],
    )?;
    let estimate = audit_epsilon(&counts, confidence, delta_target)?;
    Ok(SweepResult {
        threshold: DecisionThreshold::new(tau)?,
        counts,
        estimate,
    })
}
