//! Gaussian-DP lower bounds from attack error counts, and conversion to (ε, δ).

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::stats::{
    binom_upper_bound, normal_log_cdf, std_normal_inv_cdf, CountPair, Probability,
};

/// Upper end of the ε search bracket. Anything above is reported as unbounded.
pub const EPS_BRACKET_MAX: f64 = 200.0;

/// Default δ for the GDP to (ε, δ) conversion.
pub const DEFAULT_DELTA_TARGET: f64 = 1e-5;

/// Confusion-matrix tallies of a membership-inference attack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackCounts {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub true_negatives: u64,
}

impl AttackCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Result<Self> {
        let counts = AttackCounts {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            true_negatives: tn,
        };
        counts.validate()?;
        Ok(counts)
    }

    pub fn validate(&self) -> Result<()> {
        if self.positives() == 0 {
            return Err(Error::InvalidCounts(
                "no trials under the canary-present hypothesis".into(),
            ));
        }
        if self.negatives() == 0 {
            return Err(Error::InvalidCounts(
                "no trials under the canary-absent hypothesis".into(),
            ));
        }
        Ok(())
    }

    /// Trials run on the context holding the canary (TP + FN).
    pub fn positives(&self) -> u64 {
        self.true_positives + self.false_negatives
    }

    /// Trials run on the reference context (FP + TN).
    pub fn negatives(&self) -> u64 {
        self.false_positives + self.true_negatives
    }

    pub fn tpr(&self) -> f64 {
        self.true_positives as f64 / self.positives() as f64
    }

    pub fn fpr(&self) -> f64 {
        self.false_positives as f64 / self.negatives() as f64
    }
}

/// High-confidence upper bounds on the false-positive (ᾱ) and
/// false-negative (β̄) rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBounds {
    pub alpha_bar: Probability,
    pub beta_bar: Probability,
    pub confidence: Probability,
}

impl ErrorBounds {
    pub fn new(alpha_bar: Probability, beta_bar: Probability, confidence: Probability) -> Result<Self> {
        for (what, p) in [("alpha_bar", alpha_bar), ("beta_bar", beta_bar)] {
            if p.value() <= 0.0 {
                return Err(Error::OutOfDomain {
                    what,
                    value: p.value(),
                });
            }
        }
        Ok(ErrorBounds {
            alpha_bar,
            beta_bar,
            confidence,
        })
    }

    /// Clopper–Pearson bounds for the given tallies.
    pub fn from_counts(counts: &AttackCounts, confidence: Probability) -> Result<Self> {
        counts.validate()?;
        let alpha_bar = binom_upper_bound(
            CountPair::new(counts.false_positives, counts.negatives())?,
            confidence,
        )?;
        let beta_bar = binom_upper_bound(
            CountPair::new(counts.false_negatives, counts.positives())?,
            confidence,
        )?;
        ErrorBounds::new(alpha_bar, beta_bar, confidence)
    }
}

/// An ε value that may exceed the search bracket.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Epsilon {
    Finite(f64),
    /// The smallest admissible ε is beyond [`EPS_BRACKET_MAX`].
    Unbounded,
}

impl Epsilon {
    pub fn finite(self) -> Option<f64> {
        match self {
            Epsilon::Finite(v) => Some(v),
            Epsilon::Unbounded => None,
        }
    }

    /// Finite value, or +∞ when unbounded.
    pub fn as_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl fmt::Display for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Epsilon::Finite(v) => write!(f, "{v}"),
            Epsilon::Unbounded => f.write_str("unbounded"),
        }
    }
}

impl Serialize for Epsilon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Epsilon::Finite(v) => s.serialize_f64(*v),
            Epsilon::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Tag(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Epsilon::Finite(v)),
            Repr::Tag(t) if t == "unbounded" => Ok(Epsilon::Unbounded),
            Repr::Tag(t) => Err(serde::de::Error::custom(format!("unknown epsilon tag {t:?}"))),
        }
    }
}

/// Result of converting attack counts into a privacy lower bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdpEstimate {
    pub mu_lower: f64,
    pub epsilon_emp: Epsilon,
    pub delta_target: f64,
    pub confidence: Probability,
    pub bounds: ErrorBounds,
}

/// μ lower bound Φ⁻¹(1 − β̄) − Φ⁻¹(ᾱ), clamped at zero.
pub fn mu_lower(bounds: &ErrorBounds) -> f64 {
    mu_lower_unclamped(bounds.alpha_bar.value(), bounds.beta_bar.value()).max(0.0)
}

/// The same difference without clamping; −∞ when either bound is 1.
pub(crate) fn mu_lower_unclamped(alpha_bar: f64, beta_bar: f64) -> f64 {
    if alpha_bar >= 1.0 || beta_bar >= 1.0 || alpha_bar <= 0.0 || beta_bar <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let za = std_normal_inv_cdf(Probability::saturating(alpha_bar)).unwrap_or(f64::NEG_INFINITY);
    let zb = std_normal_inv_cdf(Probability::saturating(beta_bar)).unwrap_or(f64::NEG_INFINITY);
    // Φ⁻¹(1 − β̄) = −Φ⁻¹(β̄)
    -zb - za
}

fn check_nonneg(what: &'static str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::NonFinite(v));
    }
    if v < 0.0 {
        return Err(Error::OutOfDomain { what, value: v });
    }
    Ok(())
}

/// δ(ε; μ) = Φ(−ε/μ + μ/2) − e^ε Φ(−ε/μ − μ/2), with δ(ε; 0) = 0.
///
/// Both terms are combined in log space so that large ε neither overflows
/// e^ε nor cancels catastrophically.
pub fn delta_from_eps_mu(eps: f64, mu: f64) -> Result<Probability> {
    check_nonneg("epsilon", eps)?;
    check_nonneg("mu", mu)?;
    if mu == 0.0 {
        return Ok(Probability::ZERO);
    }
    let ratio = eps / mu;
    let log_a = normal_log_cdf(-ratio + 0.5 * mu);
    let log_b = normal_log_cdf(-ratio - 0.5 * mu);
    let rel = eps + log_b - log_a;
    let delta = if rel >= 0.0 {
        0.0
    } else {
        log_a.exp() * -rel.exp_m1()
    };
    Ok(Probability::saturating(delta))
}

/// Smallest ε ≥ 0 with δ(ε; μ) ≤ `delta_target`.
pub fn eps_from_mu_delta(mu: f64, delta_target: Probability) -> Result<Epsilon> {
    check_nonneg("mu", mu)?;
    if !delta_target.is_interior() {
        return Err(Error::OutOfDomain {
            what: "delta_target",
            value: delta_target.value(),
        });
    }
    let target = delta_target.value();
    let delta = |e: f64| delta_from_eps_mu(e, mu).map(Probability::value);
    if delta(0.0)? <= target {
        return Ok(Epsilon::Finite(0.0));
    }
    if delta(EPS_BRACKET_MAX)? > target {
        return Ok(Epsilon::Unbounded);
    }
    let (mut lo, mut hi) = (0.0_f64, EPS_BRACKET_MAX);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if delta(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Epsilon::Finite(hi))
}

/// The μ at which δ(ε; μ) equals `delta`: the inverse of
/// [`eps_from_mu_delta`] in its first argument.
pub fn mu_from_eps_delta(eps: f64, delta: Probability) -> Result<f64> {
    check_nonneg("epsilon", eps)?;
    if !delta.is_interior() {
        return Err(Error::OutOfDomain {
            what: "delta",
            value: delta.value(),
        });
    }
    let target = delta.value();
    let d = |mu: f64| delta_from_eps_mu(eps, mu).map(Probability::value);
    let mut hi = 1.0;
    while d(hi)? < target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::OutOfDomain {
                what: "epsilon",
                value: eps,
            });
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-13 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if d(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// ε_emp = ln(TPR / FPR).
pub fn eps_emp_dp(tpr: Probability, fpr: Probability) -> Result<f64> {
    if fpr.value() == 0.0 {
        return Err(Error::DivisionByZero("false-positive rate is zero"));
    }
    Ok((tpr.value() / fpr.value()).ln())
}

/// Full count-to-ε pipeline: Clopper–Pearson bounds, μ lower bound, and the
/// GDP to (ε, δ) conversion.
pub fn audit_epsilon(
    counts: &AttackCounts,
    confidence: Probability,
    delta_target: Probability,
) -> Result<GdpEstimate> {
    let bounds = ErrorBounds::from_counts(counts, confidence)?;
    let mu = mu_lower(&bounds);
    let epsilon_emp = eps_from_mu_delta(mu, delta_target)?;
    Ok(GdpEstimate {
        mu_lower: mu,
        epsilon_emp,
        delta_target: delta_target.value(),
        confidence,
        bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::std_normal_cdf;

    fn p(v: f64) -> Probability {
        Probability::new(v).unwrap()
    }

    fn bounds(a: f64, b: f64) -> ErrorBounds {
        ErrorBounds::new(p(a), p(b), p(0.95)).unwrap()
    }

    #[test]
    fn mu_lower_examples() {
        assert_eq!(mu_lower(&bounds(0.5, 0.5)), 0.0);
        let expected = 2.0 * std_normal_inv_cdf(p(0.975)).unwrap();
        assert!((mu_lower(&bounds(0.025, 0.025)) - expected).abs() < 1e-12);
        assert!((expected - 3.919928).abs() < 1e-6);
        assert_eq!(mu_lower(&bounds(0.9, 0.9)), 0.0);
        assert_eq!(mu_lower(&bounds(1.0, 0.1)), 0.0);
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta_from_eps_mu(3.0, 0.0).unwrap().value(), 0.0);
        let expected = std_normal_cdf(0.5).unwrap().value() - std_normal_cdf(-0.5).unwrap().value();
        let got = delta_from_eps_mu(0.0, 1.0).unwrap().value();
        assert!((got - expected).abs() < 1e-14);
        assert!((got - 0.382925).abs() < 1e-6);
    }

    #[test]
    fn delta_strictly_decreasing_in_eps() {
        for &mu in &[0.2, 1.0, 3.0] {
            let mut prev = f64::INFINITY;
            for i in 0..60 {
                let d = delta_from_eps_mu(i as f64 * 0.25, mu).unwrap().value();
                if d == 0.0 {
                    break;
                }
                assert!(d < prev, "mu={mu} i={i}");
                prev = d;
            }
        }
    }

    #[test]
    fn delta_survives_large_eps() {
        // Naive evaluation of e^ε Φ(·) overflows here.
        let d = delta_from_eps_mu(150.0, 12.0).unwrap().value();
        assert!(d.is_finite() && d >= 0.0);
        let d = delta_from_eps_mu(8.0, 8.0).unwrap().value();
        assert!(d > 0.0 && d < 1.0);
    }

    #[test]
    fn eps_examples() {
        assert_eq!(eps_from_mu_delta(0.0, p(1e-5)).unwrap(), Epsilon::Finite(0.0));
        let d0 = delta_from_eps_mu(3.0, 2.0).unwrap();
        let e = eps_from_mu_delta(2.0, d0).unwrap().finite().unwrap();
        assert!((e - 3.0).abs() < 1e-6);
    }

    #[test]
    fn eps_at_mu_one_matches_grid_scan() {
        let step = 1e-6;
        let mut e = 0.0;
        while delta_from_eps_mu(e, 1.0).unwrap().value() > 1e-5 {
            e += step;
        }
        let got = eps_from_mu_delta(1.0, p(1e-5)).unwrap().finite().unwrap();
        assert!((got - e).abs() <= step, "{got} vs {e}");
        // Frozen from a 40-digit evaluation.
        assert!((got - 4.377_178_096).abs() < 1e-6);
    }

    #[test]
    fn eps_unbounded_for_huge_mu() {
        assert_eq!(eps_from_mu_delta(80.0, p(1e-5)).unwrap(), Epsilon::Unbounded);
    }

    #[test]
    fn eps_rejects_bad_delta() {
        assert!(eps_from_mu_delta(1.0, Probability::ZERO).is_err());
        assert!(eps_from_mu_delta(1.0, Probability::ONE).is_err());
        assert!(eps_from_mu_delta(-1.0, p(0.1)).is_err());
    }

    #[test]
    fn mu_from_eps_inverts() {
        for &eps in &[0.5, 1.0, 4.0, 8.0] {
            let mu = mu_from_eps_delta(eps, p(1e-5)).unwrap();
            let back = eps_from_mu_delta(mu, p(1e-5)).unwrap().finite().unwrap();
            assert!((back - eps).abs() < 1e-6, "{eps} -> {mu} -> {back}");
        }
    }

    #[test]
    fn eps_emp_dp_examples() {
        assert_eq!(eps_emp_dp(p(0.3), p(0.3)).unwrap(), 0.0);
        assert!((eps_emp_dp(p(0.9), p(0.1)).unwrap() - 9f64.ln()).abs() < 1e-12);
        assert!(matches!(
            eps_emp_dp(p(0.9), Probability::ZERO),
            Err(Error::DivisionByZero(_))
        ));
        let fpr = binom_upper_bound(CountPair::new(0, 100).unwrap(), p(0.95)).unwrap();
        let e = eps_emp_dp(Probability::ONE, fpr).unwrap();
        assert!((e - 3.522_922_754).abs() < 1e-6);
    }

    #[test]
    fn audit_epsilon_chance_level() {
        let c = AttackCounts::new(100, 100, 100, 100).unwrap();
        let est = audit_epsilon(&c, p(0.95), p(1e-5)).unwrap();
        assert_eq!(est.mu_lower, 0.0);
        assert_eq!(est.epsilon_emp, Epsilon::Finite(0.0));
    }

    #[test]
    fn audit_epsilon_perfect_attack() {
        let c = AttackCounts::new(200_000, 0, 0, 200_000).unwrap();
        let est = audit_epsilon(&c, p(0.95), p(1e-5)).unwrap();
        // Frozen from a 40-digit evaluation of the same composition.
        assert!((est.bounds.alpha_bar.value() - 1.497_854_918_8e-5).abs() < 1e-14);
        assert!((est.mu_lower - 8.347_584_445_5).abs() < 1e-6);
        let eps = est.epsilon_emp.finite().unwrap();
        assert!((eps - 69.636_366_398).abs() < 1e-5, "{eps}");

        let small = AttackCounts::new(100, 0, 0, 100).unwrap();
        let e_small = audit_epsilon(&small, p(0.95), p(1e-5)).unwrap();
        let e_small = e_small.epsilon_emp.finite().unwrap();
        assert!((e_small - 22.566_832_621).abs() < 1e-5);
        assert!(e_small < eps);
    }

    #[test]
    fn counts_require_both_arms() {
        assert!(AttackCounts::new(0, 1, 0, 1).is_err());
        assert!(AttackCounts::new(1, 0, 1, 0).is_err());
    }

    #[test]
    fn epsilon_serde_round_trip() {
        let s = serde_json::to_string(&[Epsilon::Finite(1.5), Epsilon::Unbounded]).unwrap();
        assert_eq!(s, r#"[1.5,"unbounded"]"#);
        let back: Vec<Epsilon> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vec![Epsilon::Finite(1.5), Epsilon::Unbounded]);
    }
}
