//! Bootstrap auditing: resample recorded clean responses, add fresh
//! mechanism noise, and tally the attack's decisions.

use std::time::Instant;

use rayon::prelude::*;

use super::decision::signal_label;
use super::report::point_epsilon;
use super::{
    distance_difference, sweep_threshold, vote_difference, AuditConfig, AuditReport,
    CandidatePool, DecisionThreshold, Task, ThreatModel,
};
use crate::error::{Error, Result};
use crate::gdp::{audit_epsilon, AttackCounts};
use crate::mechanisms::{
    esa_select, perturb_mean, private_vote, EmbeddingVector, Hypothesis, NeighboringPair,
    VoteVector,
};
use crate::oracles::{
    collect, resample, AuditQuery, CollectOptions, Collection, Oracle, OracleCall, RecordResponse,
    SignalPair,
};
use crate::parallel::with_workers;
use crate::rng::{derived_rng, stream, AuditRng};

/// Clean responses of both hypotheses, ready for resampling.
#[derive(Clone, Debug, PartialEq)]
pub enum CleanResponses {
    Votes {
        with: Vec<VoteVector>,
        without: Vec<VoteVector>,
    },
    /// Clean mean embeddings per trial.
    Embeddings {
        with: Vec<Vec<f64>>,
        without: Vec<Vec<f64>>,
        signal: SignalPair,
        /// Release candidates; only used by black-box audits.
        candidates: Vec<EmbeddingVector>,
    },
}

impl CleanResponses {
    pub fn from_votes(collection: &Collection<usize>, num_classes: usize) -> Result<Self> {
        Ok(CleanResponses::Votes {
            with: collection.clean_votes(Hypothesis::WithCanary, num_classes)?,
            without: collection.clean_votes(Hypothesis::WithoutCanary, num_classes)?,
        })
    }

    pub fn from_embeddings(
        collection: &Collection<EmbeddingVector>,
        signal: SignalPair,
        candidates: Vec<EmbeddingVector>,
    ) -> Result<Self> {
        Ok(CleanResponses::Embeddings {
            with: collection.clean_means(Hypothesis::WithCanary)?,
            without: collection.clean_means(Hypothesis::WithoutCanary)?,
            signal,
            candidates,
        })
    }

    pub fn task(&self) -> Task {
        match self {
            CleanResponses::Votes { .. } => Task::Classification,
            CleanResponses::Embeddings { .. } => Task::Generation,
        }
    }

    fn arm_len(&self, h: Hypothesis) -> usize {
        match (self, h) {
            (CleanResponses::Votes { with, .. }, Hypothesis::WithCanary) => with.len(),
            (CleanResponses::Votes { without, .. }, Hypothesis::WithoutCanary) => without.len(),
            (CleanResponses::Embeddings { with, .. }, Hypothesis::WithCanary) => with.len(),
            (CleanResponses::Embeddings { without, .. }, Hypothesis::WithoutCanary) => {
                without.len()
            }
        }
    }
}

fn sample_stream(h: Hypothesis) -> u64 {
    match h {
        Hypothesis::WithCanary => stream::SAMPLE_WITH,
        Hypothesis::WithoutCanary => stream::SAMPLE_WITHOUT,
    }
}

/// Outcome of one bootstrap trial.
enum Observation {
    Statistic(f64),
    Member(bool),
    NonSignal,
}

fn observe(
    clean: &CleanResponses,
    config: &AuditConfig,
    sigma: f64,
    h: Hypothesis,
    rng: &mut AuditRng,
) -> Result<Observation> {
    let white = config.threat_model == ThreatModel::WhiteBox;
    match clean {
        CleanResponses::Votes { with, without } => {
            let pool = if h == Hypothesis::WithCanary { with } else { without };
            let v = resample(pool, rng)?;
            let (noisy, winner) = private_vote(v, sigma, rng);
            Ok(if white {
                Observation::Statistic(vote_difference(&noisy, config.yes_class, config.no_class)?)
            } else {
                Observation::Member(winner == config.yes_class)
            })
        }
        CleanResponses::Embeddings {
            with,
            without,
            signal,
            candidates,
        } => {
            let pool = if h == Hypothesis::WithCanary { with } else { without };
            let mut m = resample(pool, rng)?.clone();
            perturb_mean(&mut m, sigma, rng);
            if white {
                // Oriented so that larger means "member".
                return Ok(Observation::Statistic(-distance_difference(&m, signal)?));
            }
            let chosen = &candidates[esa_select(&m, candidates)?];
            Ok(match signal_label(chosen, signal) {
                Some(member) => Observation::Member(member),
                None => Observation::NonSignal,
            })
        }
    }
}

fn observe_arm(
    clean: &CleanResponses,
    config: &AuditConfig,
    h: Hypothesis,
    workers: usize,
) -> Result<Vec<Observation>> {
    if clean.arm_len(h) == 0 {
        return Err(Error::Empty("clean responses"));
    }
    let sigma = config.sigma();
    with_workers(workers, || {
        (0..config.n_sample as u64)
            .into_par_iter()
            .map(|trial| {
                let mut rng = derived_rng(config.seed, &[sample_stream(h), trial]);
                observe(clean, config, sigma, h, &mut rng)
            })
            .collect::<Result<Vec<_>>>()
    })?
}

/// The white-box statistics of `n_sample` bootstrap trials under `h`, in
/// trial order: Ṽ_yes − Ṽ_no for classification, and
/// ‖m − emb(y₀)‖ − ‖m − emb(y₁)‖ for generation.
pub fn sample_statistics(
    clean: &CleanResponses,
    config: &AuditConfig,
    h: Hypothesis,
    workers: usize,
) -> Result<Vec<f64>> {
    let mut white = config.clone();
    white.threat_model = ThreatModel::WhiteBox;
    observe_arm(clean, &white, h, workers)?
        .into_iter()
        .map(|o| match o {
            Observation::Statistic(s) => Ok(s),
            _ => unreachable!("white-box trials yield statistics"),
        })
        .collect()
}

fn check_task(clean: &CleanResponses, config: &AuditConfig) -> Result<()> {
    if clean.task() != config.task {
        return Err(Error::config(format!(
            "clean responses are for {} but the audit task is {}",
            clean.task().as_str(),
            config.task.as_str()
        )));
    }
    if let CleanResponses::Embeddings { candidates, .. } = clean {
        if config.threat_model == ThreatModel::BlackBox && candidates.is_empty() {
            return Err(Error::Empty("candidate pool"));
        }
    }
    Ok(())
}

/// Runs `n_sample` noisy trials per hypothesis from the clean responses and
/// converts the attack's error counts into an empirical privacy estimate.
///
/// White-box audits pick τ by sweeping the generated statistics; black-box
/// audits use the fixed label rule. The result depends only on `config`
/// (including its seed), never on `workers`.
pub fn bootstrap_audit(
    clean: &CleanResponses,
    config: &AuditConfig,
    workers: usize,
) -> Result<AuditReport> {
    let start = Instant::now();
    config.validate()?;
    check_task(clean, config)?;
    let confidence = config.confidence()?;
    let delta_target = config.delta_target()?;

    let (counts, estimate, threshold, non_signal) = match config.threat_model {
        ThreatModel::WhiteBox => {
            let s1 = sample_statistics(clean, config, Hypothesis::WithCanary, workers)?;
            let s0 = sample_statistics(clean, config, Hypothesis::WithoutCanary, workers)?;
            let r = sweep_threshold(&s1, &s0, confidence, delta_target)?;
            // Report τ in the rule's own orientation.
            let tau = match config.task {
                Task::Classification => r.threshold,
                Task::Generation => DecisionThreshold::new(-r.threshold.tau())?,
            };
            (r.counts, r.estimate, Some(tau), 0)
        }
        ThreatModel::BlackBox => {
            let mut tally = [0u64; 2];
            let mut non_signal = 0u64;
            for (i, h) in Hypothesis::BOTH.into_iter().enumerate() {
                for o in observe_arm(clean, config, h, workers)? {
                    match o {
                        Observation::Member(true) => tally[i] += 1,
                        Observation::Member(false) => {}
                        Observation::NonSignal => non_signal += 1,
                        Observation::Statistic(_) => unreachable!("black-box trials yield labels"),
                    }
                }
            }
            if non_signal > 0 {
                log::warn!(
                    "{non_signal} releases were neither signal output; counted as non-member"
                );
            }
            let n = config.n_sample as u64;
            let counts = AttackCounts::new(tally[0], tally[1], n - tally[0], n - tally[1])?;
            let estimate = audit_epsilon(&counts, confidence, delta_target)?;
            (counts, estimate, None, non_signal)
        }
    };

    Ok(AuditReport {
        config: config.clone(),
        sigma: config.sigma(),
        counts,
        estimate,
        eps_emp_point: point_epsilon(&counts),
        threshold,
        non_signal_selections: non_signal,
        oracle_failures: 0,
        wall_time: start.elapsed(),
    })
}

/// Release candidates for black-box generation audits.
pub fn candidate_pool<O>(
    oracle: &O,
    query: &AuditQuery,
    config: &AuditConfig,
    signal: &SignalPair,
) -> Result<Vec<EmbeddingVector>>
where
    O: Oracle<Response = EmbeddingVector>,
{
    match config.candidate_pool {
        CandidatePool::SignalPair => {
            Ok(vec![signal.y1_embedding.clone(), signal.y0_embedding.clone()])
        }
        CandidatePool::ZeroShot => (0..config.mechanism.candidate_pool_size as u64)
            .map(|i| {
                let mut rng = derived_rng(config.seed, &[stream::CANDIDATE_POOL, i]);
                let call = OracleCall {
                    hypothesis: Hypothesis::WithoutCanary,
                    trial: i,
                    partition: None,
                    subset: &[],
                    query,
                };
                Ok(oracle.respond(&call, &mut rng)?)
            })
            .collect(),
    }
}

/// Response types an end-to-end audit can run on.
pub trait AuditResponse: RecordResponse + Clone + Send + Sync + Sized {
    fn clean_responses<O: Oracle<Response = Self>>(
        oracle: &O,
        collection: &Collection<Self>,
        query: &AuditQuery,
        config: &AuditConfig,
        signal: Option<&SignalPair>,
    ) -> Result<CleanResponses>;
}

impl AuditResponse for usize {
    fn clean_responses<O: Oracle<Response = Self>>(
        _oracle: &O,
        collection: &Collection<Self>,
        _query: &AuditQuery,
        config: &AuditConfig,
        _signal: Option<&SignalPair>,
    ) -> Result<CleanResponses> {
        CleanResponses::from_votes(collection, config.num_classes)
    }
}

impl AuditResponse for EmbeddingVector {
    fn clean_responses<O: Oracle<Response = Self>>(
        oracle: &O,
        collection: &Collection<Self>,
        query: &AuditQuery,
        config: &AuditConfig,
        signal: Option<&SignalPair>,
    ) -> Result<CleanResponses> {
        let signal = signal.ok_or_else(|| Error::config("generation audits need a signal pair"))?;
        let candidates = match config.threat_model {
            ThreatModel::BlackBox => candidate_pool(oracle, query, config, signal)?,
            ThreatModel::WhiteBox => Vec::new(),
        };
        CleanResponses::from_embeddings(collection, signal.clone(), candidates)
    }
}

/// Collects `n_llm` clean rows per hypothesis from `oracle`, then runs the
/// bootstrap audit on them.
pub fn run_audit<O>(
    config: &AuditConfig,
    oracle: &O,
    pair: &NeighboringPair,
    query: &AuditQuery,
    signal: Option<&SignalPair>,
    workers: usize,
) -> Result<AuditReport>
where
    O: Oracle,
    O::Response: AuditResponse,
{
    let start = Instant::now();
    config.validate()?;
    let options = CollectOptions {
        seed: config.seed,
        workers,
        padding: config.mechanism.padding,
        max_failures: config.max_failures,
    };
    let collection = collect(
        oracle,
        pair,
        query,
        config.mechanism.num_partitions,
        config.n_llm,
        &options,
    )?;
    let clean = O::Response::clean_responses(oracle, &collection, query, config, signal)?;
    let mut report = bootstrap_audit(&clean, config, workers)?;
    report.oracle_failures = collection.failures().len();
    report.wall_time = start.elapsed();
    Ok(report)
}
