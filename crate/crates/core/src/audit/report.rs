use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{tagged_float, AuditConfig, DecisionThreshold};
use crate::error::Result;
use crate::gdp::{AttackCounts, GdpEstimate};

/// Outcome of one audit.
///
/// The JSON form carries everything except the wall time, so reruns of the
/// same configuration produce identical documents; the CSV row includes it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub config: AuditConfig,
    pub sigma: f64,
    pub counts: AttackCounts,
    pub estimate: GdpEstimate,
    /// ln(TPR/FPR) on the raw rates: `inf` when FPR = 0 < TPR, `nan` when
    /// both are zero.
    #[serde(with = "tagged_float")]
    pub eps_emp_point: f64,
    /// White-box threshold, in the orientation of the task's rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<DecisionThreshold>,
    /// Black-box generation releases that matched neither signal output.
    #[serde(default)]
    pub non_signal_selections: u64,
    #[serde(default)]
    pub oracle_failures: usize,
    #[serde(skip)]
    pub wall_time: Duration,
}

pub const CSV_HEADER: &str = "task,threat,T,eps_theory,delta,n_llm,n_sample,gamma,tp,fp,fn,tn,\
mu_lower,eps_emp_gdp,eps_emp_point,tau,seed,wall_ms";

pub(crate) fn point_epsilon(counts: &AttackCounts) -> f64 {
    let (tpr, fpr) = (counts.tpr(), counts.fpr());
    match (tpr > 0.0, fpr > 0.0) {
        (true, true) => (tpr / fpr).ln(),
        (true, false) => f64::INFINITY,
        (false, true) => f64::NEG_INFINITY,
        (false, false) => f64::NAN,
    }
}

impl AuditReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn csv_row(&self) -> String {
        let c = &self.config;
        let f = tagged_float::to_text;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.task.as_str(),
            c.threat_model.as_str(),
            c.mechanism.num_partitions,
            f(c.mechanism.eps_theory),
            f(c.mechanism.delta),
            c.n_llm,
            c.n_sample,
            f(c.confidence),
            self.counts.true_positives,
            self.counts.false_positives,
            self.counts.false_negatives,
            self.counts.true_negatives,
            f(self.estimate.mu_lower),
            self.estimate.epsilon_emp,
            f(self.eps_emp_point),
            self.threshold.map(|t| t.to_string()).unwrap_or_default(),
            c.seed,
            self.wall_time.as_millis(),
        )
    }

    /// Appends the row (and the header, if the file is new or empty) with a
    /// single `write_all` on an append-mode handle, so concurrent writers
    /// never interleave partial lines.
    pub fn append_csv(&self, path: &Path) -> Result<()> {
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut buf = String::new();
        if file.metadata()?.len() == 0 {
            buf.push_str(CSV_HEADER);
            buf.push('\n');
        }
        buf.push_str(&self.csv_row());
        buf.push('\n');
        file.write_all(buf.as_bytes())?;
        Ok(())
    }
}
