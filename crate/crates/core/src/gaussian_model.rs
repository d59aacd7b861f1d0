//! Closed-form rates for the two-class Gaussian vote channel.
//!
//! With clean votes `[k, T−k]` when the canary is present and
//! `[k−b, T−k+b]` when it is absent, the noisy vote difference is normal with
//! variance `2σ²`, so the attack that answers "member" when the first class
//! wins has
//!
//! * TPR = Φ((2k − T)/(√2σ)),
//! * FPR = Φ((2k − T − 2b)/(√2σ)).
//!
//! The GDP parameter of the channel is `√2·b/σ` whatever `k` and `T` are,
//! while ln(TPR/FPR) shrinks as `k` grows.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gdp::{eps_from_mu_delta, Epsilon};
use crate::stats::{normal_cdf, normal_log_cdf, Probability};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VotePattern {
    pub num_partitions: usize,
    pub k: usize,
    /// Vote margin between the two contexts, in `[0, 1]`.
    pub b: f64,
    pub sigma: f64,
}

impl VotePattern {
    pub fn new(num_partitions: usize, k: usize, b: f64, sigma: f64) -> Result<Self> {
        let p = VotePattern {
            num_partitions,
            k,
            b,
            sigma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_partitions == 0 || self.k > self.num_partitions {
            return Err(Error::config(format!(
                "k = {} must lie in [0, T = {}] with T ≥ 1",
                self.k, self.num_partitions
            )));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::OutOfDomain {
                what: "vote margin b",
                value: self.b,
            });
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::OutOfDomain {
                what: "sigma",
                value: self.sigma,
            });
        }
        Ok(())
    }

    /// Standardized mean of the vote difference under the member hypothesis.
    fn x_with(&self) -> f64 {
        (2.0 * self.k as f64 - self.num_partitions as f64) / (std::f64::consts::SQRT_2 * self.sigma)
    }

    fn x_without(&self) -> f64 {
        self.x_with() - std::f64::consts::SQRT_2 * self.b / self.sigma
    }
}

/// (TPR, FPR) of the "first class wins" rule.
pub fn analytic_rates(p: &VotePattern) -> Result<(Probability, Probability)> {
    p.validate()?;
    Ok((
        Probability::new(normal_cdf(p.x_with()))?,
        Probability::new(normal_cdf(p.x_without()))?,
    ))
}

/// μ = √2·b/σ.
pub fn mu_gauss(b: f64, sigma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&b) {
        return Err(Error::OutOfDomain {
            what: "vote margin b",
            value: b,
        });
    }
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::OutOfDomain {
            what: "sigma",
            value: sigma,
        });
    }
    Ok(std::f64::consts::SQRT_2 * b / sigma)
}

/// ln(TPR/FPR), evaluated from log-CDFs so deep tails stay finite.
pub fn eps_emp_analytic(p: &VotePattern) -> Result<f64> {
    p.validate()?;
    Ok(normal_log_cdf(p.x_with()) - normal_log_cdf(p.x_without()))
}

/// Choice of `k` for each `T` in a sweep.
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KRule {
    Fixed(usize),
    /// k = ⌊T/2⌋.
    Centered,
    /// k = 1, the `[1, T−1]` vs `[0, T]` pattern.
    Extreme,
}

impl KRule {
    pub fn k_for(self, num_partitions: usize) -> usize {
        match self {
            KRule::Fixed(k) => k,
            KRule::Centered => num_partitions / 2,
            KRule::Extreme => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub num_partitions: usize,
    pub k: usize,
    pub b: f64,
    pub sigma: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub mu_gauss: f64,
    pub eps_analytic: f64,
    pub eps_gdp: Epsilon,
}

/// Tabulates rates, μ and both ε notions over `T` values. `T` values for
/// which the rule gives `k > T` are skipped.
pub fn sweep(
    t_values: impl IntoIterator<Item = usize>,
    k_rule: KRule,
    b: f64,
    sigma: f64,
    delta_target: Probability,
) -> Result<Vec<SweepRow>> {
    let mu = mu_gauss(b, sigma)?;
    let eps_gdp = eps_from_mu_delta(mu, delta_target)?;
    let mut rows = Vec::new();
    for t in t_values {
        let k = k_rule.k_for(t);
        if k > t {
            continue;
        }
        let p = VotePattern::new(t, k, b, sigma)?;
        let (tpr, fpr) = analytic_rates(&p)?;
        rows.push(SweepRow {
            num_partitions: t,
            k,
            b,
            sigma,
            tpr: tpr.value(),
            fpr: fpr.value(),
            mu_gauss: mu,
            eps_analytic: eps_emp_analytic(&p)?,
            eps_gdp,
        });
    }
    Ok(rows)
}

pub const SWEEP_CSV_HEADER: &str = "T,k,b,sigma,tpr,fpr,mu_gauss,eps_analytic,eps_gdp";

/// Writes the header and one line per row.
pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    let mut buf = String::from(SWEEP_CSV_HEADER);
    buf.push('\n');
    for r in rows {
        buf.push_str(&format!(
            "{},{},{},{},{:e},{:e},{},{},{}\n",
            r.num_partitions, r.k, r.b, r.sigma, r.tpr, r.fpr, r.mu_gauss, r.eps_analytic, r.eps_gdp
        ));
    }
    w.write_all(buf.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{private_vote, VoteVector};
    use crate::rng::derived_rng;

    fn pat(t: usize, k: usize, b: f64, s: f64) -> VotePattern {
        VotePattern::new(t, k, b, s).unwrap()
    }

    #[test]
    fn rates_examples() {
        let (tpr, fpr) = analytic_rates(&pat(10, 5, 0.0, 1.0)).unwrap();
        assert_eq!((tpr.value(), fpr.value()), (0.5, 0.5));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let (tpr, fpr) = analytic_rates(&pat(10, 1, 1.0, s)).unwrap();
        assert!((tpr.value() / normal_cdf(-8.0) - 1.0).abs() < 1e-12);
        assert!((fpr.value() / normal_cdf(-10.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mu_examples() {
        assert_eq!(mu_gauss(0.0, 3.0).unwrap(), 0.0);
        assert!((mu_gauss(1.0, std::f64::consts::SQRT_2).unwrap() - 1.0).abs() < 1e-15);
        assert!(mu_gauss(1.5, 1.0).is_err());
    }

    #[test]
    fn eps_examples() {
        assert_eq!(eps_emp_analytic(&pat(10, 3, 0.0, 2.0)).unwrap(), 0.0);
        // ln Φ(−2√2) − ln Φ(−2.5√2), 40-digit reference.
        let v = eps_emp_analytic(&pat(10, 1, 1.0, 2.0)).unwrap();
        assert!((v - 2.441874008110627).abs() < 1e-12, "{v}");
        let values: Vec<f64> = (1..=10)
            .map(|k| eps_emp_analytic(&pat(10, k, 1.0, 2.0)).unwrap())
            .collect();
        assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
    }

    #[test]
    fn deep_tail_stays_finite() {
        // Both rates underflow to 0 in f64; the log-domain ratio does not.
        let v = eps_emp_analytic(&pat(100, 0, 1.0, 0.05)).unwrap();
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn rates_match_private_vote_simulation() {
        let (t, k, sigma) = (6usize, 2u64, 1.5);
        let with = VoteVector::new(vec![k, t as u64 - k]).unwrap();
        let without = VoteVector::new(vec![k - 1, t as u64 - k + 1]).unwrap();
        let (tpr, fpr) = analytic_rates(&pat(t, k as usize, 1.0, sigma)).unwrap();
        let mut rng = derived_rng(21, &[]);
        let n = 1_000_000;
        let hits = |v: &VoteVector, rng: &mut _| {
            (0..n).filter(|_| private_vote(v, sigma, rng).1 == 0).count() as f64 / n as f64
        };
        let r1 = hits(&with, &mut rng);
        let r0 = hits(&without, &mut rng);
        for (emp, p) in [(r1, tpr.value()), (r0, fpr.value())] {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((emp - p).abs() < 3.0 * se, "{emp} vs {p}");
        }
    }

    #[test]
    fn sweep_rules_and_csv() {
        let delta = Probability::new(1e-5).unwrap();
        let rows = sweep([2, 4, 6], KRule::Extreme, 1.0, 2.0, delta).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.k == 1 && r.mu_gauss == rows[0].mu_gauss));
        let centered = sweep([4, 7], KRule::Centered, 1.0, 2.0, delta).unwrap();
        assert_eq!(centered.iter().map(|r| r.k).collect::<Vec<_>>(), vec![2, 3]);
        let fixed = sweep([2, 4], KRule::Fixed(3), 1.0, 2.0, delta).unwrap();
        assert_eq!(fixed.len(), 1);
        // Same T = 4, different k.
        assert!(rows[1].eps_analytic > centered[0].eps_analytic);

        let mut out = Vec::new();
        write_sweep_csv(&mut out, &rows).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], SWEEP_CSV_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("2,1,1,2,"));
    }
}
