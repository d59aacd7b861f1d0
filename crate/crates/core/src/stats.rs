//! Normal distribution special functions and one-sided Clopper–Pearson bounds.
//!
//! Everything here is a pure function of its arguments.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::fmt;

use serde::{Deserialize, Serialize};
use libm::erfc;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// A value in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub const ZERO: Probability = Probability(0.0);
    pub const ONE: Probability = Probability(1.0);
    pub const HALF: Probability = Probability(0.5);

    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite(value));
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::OutOfDomain {
                what: "probability",
                value,
            });
        }
        Ok(Probability(value))
    }

    /// Clamps into `[0, 1]`; NaN maps to zero.
    pub fn saturating(value: f64) -> Self {
        if value.is_nan() {
            Probability(0.0)
        } else {
            Probability(value.clamp(0.0, 1.0))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn complement(self) -> Self {
        Probability(1.0 - self.0)
    }

    /// True for values strictly inside `(0, 1)`.
    pub fn is_interior(self) -> bool {
        self.0 > 0.0 && self.0 < 1.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Probability::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Successes out of a positive number of Bernoulli trials.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountPair {
    successes: u64,
    trials: u64,
}

impl CountPair {
    pub fn new(successes: u64, trials: u64) -> Result<Self> {
        if trials == 0 {
            return Err(Error::InvalidCounts("trials must be positive".into()));
        }
        if successes > trials {
            return Err(Error::InvalidCounts(format!(
                "{successes} successes exceed {trials} trials"
            )));
        }
        Ok(CountPair { successes, trials })
    }

    pub fn successes(self) -> u64 {
        self.successes
    }

    pub fn trials(self) -> u64 {
        self.trials
    }

    pub fn rate(self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Unchecked Φ(x). NaN propagates.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// ln Φ(x), accurate deep into the lower tail where Φ itself underflows.
pub fn normal_log_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x > 0.0 {
        return (-normal_cdf(-x)).ln_1p();
    }
    if x > -30.0 {
        return normal_cdf(x).ln();
    }
    // Asymptotic series for the Mills ratio; truncation error < 1e-14 past -30.
    let z2 = 1.0 / (x * x);
    let mut term = 1.0;
    let mut series = 1.0;
    for k in 1..=6 {
        term *= -((2 * k - 1) as f64) * z2;
        series += term;
    }
    -0.5 * x * x - (-x).ln() - 0.5 * (2.0 * PI).ln() + series.ln()
}

/// Φ(x) for finite `x`.
pub fn std_normal_cdf(x: f64) -> Result<Probability> {
    if !x.is_finite() {
        return Err(Error::NonFinite(x));
    }
    Ok(Probability(normal_cdf(x)))
}

/// Φ⁻¹(p) for `p` strictly inside `(0, 1)`.
///
/// The erfc-inverse approximation is polished by one Newton step against
/// [`normal_cdf`], which brings |Φ(x) − p| down to a few ulps of `p`.
pub fn std_normal_inv_cdf(p: Probability) -> Result<f64> {
    let p = p.value();
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::OutOfDomain {
            what: "quantile probability",
            value: p,
        });
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let x0 = -SQRT_2 * erfc_inv(2.0 * p);
    // Φ(x0) - p; in the upper half it is formed from the complements.
    let resid = if p < 0.5 {
        normal_cdf(x0) - p
    } else {
        (1.0 - p) - normal_cdf(-x0)
    };
    let dens = normal_pdf(x0);
    if dens > 0.0 && resid.is_finite() {
        Ok(x0 - resid / dens)
    } else {
        Ok(x0)
    }
}

/// Sample sizes up to this use the exact binomial tail; larger ones go
/// through the regularized incomplete beta function.
const EXACT_TAIL_MAX_TRIALS: u64 = 10_000;

/// Exact P[Bin(n, p) ≤ s].
pub fn binom_cdf(successes: u64, trials: u64, p: f64) -> f64 {
    if successes >= trials || p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return 0.0;
    }
    if trials <= EXACT_TAIL_MAX_TRIALS {
        let coeffs = ln_binomial_coefficients(trials, successes);
        exact_tail(&coeffs, trials, p)
    } else {
        1.0 - beta_reg(successes as f64 + 1.0, (trials - successes) as f64, p)
    }
}

/// ln C(n, k) for k in 0..=s.
fn ln_binomial_coefficients(n: u64, s: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(s as usize + 1);
    let mut acc = 0.0;
    out.push(acc);
    for k in 1..=s {
        acc += ((n - k + 1) as f64).ln() - (k as f64).ln();
        out.push(acc);
    }
    out
}

fn exact_tail(ln_coeffs: &[f64], n: u64, p: f64) -> f64 {
    let lp = p.ln();
    let lq = (-p).ln_1p();
    let total: f64 = ln_coeffs
        .iter()
        .enumerate()
        .map(|(k, c)| (c + k as f64 * lp + (n - k as u64) as f64 * lq).exp())
        .sum();
    total.min(1.0)
}

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (-x).ln_1p();
    if x < (a + 1.0) / (a + b + 2.0) {
        (ln_front.exp() * beta_continued_fraction(a, b, x) / a).clamp(0.0, 1.0)
    } else {
        (1.0 - ln_front.exp() * beta_continued_fraction(b, a, 1.0 - x) / b).clamp(0.0, 1.0)
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 20_000;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// One-sided Clopper–Pearson upper bound at level `confidence`.
///
/// Returns the `p` solving P[Bin(trials, p) ≤ successes] = 1 − confidence,
/// and exactly 1 when every trial succeeded. For `confidence ≥ 1/2` the
/// bound is never below the observed rate.
pub fn binom_upper_bound(counts: CountPair, confidence: Probability) -> Result<Probability> {
    let gamma = confidence.value();
    if !confidence.is_interior() {
        return Err(Error::OutOfDomain {
            what: "confidence",
            value: gamma,
        });
    }
    let (s, n) = (counts.successes, counts.trials);
    if s == n {
        return Ok(Probability::ONE);
    }
    let alpha = 1.0 - gamma;
    if s == 0 {
        // (1 - p)^n = 1 - γ
        return Ok(Probability::saturating(-(alpha.ln() / n as f64).exp_m1()));
    }

    let tail: Box<dyn Fn(f64) -> f64> = if n <= EXACT_TAIL_MAX_TRIALS {
        let coeffs = ln_binomial_coefficients(n, s);
        Box::new(move |p| exact_tail(&coeffs, n, p))
    } else {
        let (a, b) = (s as f64 + 1.0, (n - s) as f64);
        Box::new(move |p| 1.0 - beta_reg(a, b, p))
    };

    // The tail is decreasing in p.
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 + 1e-13 * lo {
            break;
        }
    }
    Ok(Probability::saturating(hi))
}
