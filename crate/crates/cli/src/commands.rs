use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Duration;

use dpaudit::audit::{run_audit, AuditConfig, AuditResponse, CandidatePool, Task, ThreatModel};
use dpaudit::gaussian_model::{sweep, write_sweep_csv};
use dpaudit::gdp::{
    audit_epsilon, delta_from_eps_mu, eps_from_mu_delta, mu_from_eps_delta, AttackCounts,
};
use dpaudit::mechanisms::{EmbeddingVector, Hypothesis, NeighboringPair};
use dpaudit::oracles::{
    batch_requests, collect, write_batch_requests, write_records, AuditQuery, CanaryDetector,
    CanaryDetectorConfig, CanaryEmbeddingDetector, CollectOptions, ExternalEmbeddingOracle,
    ExternalVoteOracle, FileBatchTransport, HttpTransport, Oracle, OracleError, PromptBuilder,
    ReplayOracle, SignalPair,
};
use dpaudit::{Error, Probability};

use crate::config::{OracleConfig, RunConfig};
use crate::exit::CliError;

/// Something to do with whichever oracle the config selects.
trait WithOracle {
    type Output;
    fn run<O>(self, oracle: &O) -> Result<Self::Output, CliError>
    where
        O: Oracle,
        O::Response: AuditResponse;
}

struct Setup<'a> {
    config: &'a RunConfig,
    audit: &'a AuditConfig,
    pair: NeighboringPair,
    query: AuditQuery,
    signal: Option<SignalPair>,
}

impl<'a> Setup<'a> {
    fn new(config: &'a RunConfig) -> Result<Self, CliError> {
        let audit = config.audit()?;
        let (pair, query) = config.context.build(audit)?;
        let signal = config.signal()?;
        if audit.task == Task::Generation && signal.is_none() {
            return Err(CliError::Config("generation audits need a [signal] section".into()));
        }
        Ok(Setup {
            config,
            audit,
            pair,
            query,
            signal,
        })
    }

    fn signal(&self) -> &SignalPair {
        self.signal.as_ref().expect("checked in Setup::new")
    }

    fn require(&self, task: Task, kind: &str) -> Result<(), CliError> {
        if self.audit.task != task {
            return Err(CliError::Config(format!(
                "oracle kind {kind:?} only supports {} audits",
                task.as_str()
            )));
        }
        Ok(())
    }

    fn dispatch<W: WithOracle>(&self, job: W) -> Result<W::Output, CliError> {
        let task = self.audit.task;
        match self.config.oracle()? {
            OracleConfig::Detector { flip_probability } => {
                self.require(Task::Classification, "detector")?;
                job.run(&CanaryDetector::new(CanaryDetectorConfig::with_flip(*flip_probability))?)
            }
            OracleConfig::EmbeddingDetector { flip_probability } => {
                self.require(Task::Generation, "embedding_detector")?;
                job.run(&CanaryEmbeddingDetector::new(
                    CanaryDetectorConfig::with_flip(*flip_probability),
                    self.signal().clone(),
                )?)
            }
            OracleConfig::Replay { path } => match task {
                Task::Classification => job.run(&ReplayOracle::<usize>::from_file(path)?),
                Task::Generation => job.run(&ReplayOracle::<EmbeddingVector>::from_file(path)?),
            },
            OracleConfig::Http {
                url,
                auth_header,
                auth_env,
                timeout_secs,
                labels,
                decode,
            } => {
                let auth = match (auth_header, auth_env) {
                    (Some(h), Some(var)) => {
                        let value = std::env::var(var).map_err(|_| {
                            CliError::Config(format!("environment variable {var} is not set"))
                        })?;
                        Some((h.clone(), value))
                    }
                    (None, None) => None,
                    _ => {
                        return Err(CliError::Config(
                            "auth_header and auth_env must be given together".into(),
                        ))
                    }
                };
                let transport = HttpTransport::new(url.clone(), auth, Duration::from_secs(*timeout_secs));
                match task {
                    Task::Classification => {
                        let prompt = PromptBuilder {
                            decode: *decode,
                            ..Default::default()
                        };
                        job.run(&ExternalVoteOracle::new(transport, prompt, labels.clone())?)
                    }
                    Task::Generation => job.run(&ExternalEmbeddingOracle::new(
                        transport,
                        *decode,
                        self.signal().clone(),
                    )),
                }
            }
            OracleConfig::FileBatch {
                requests,
                responses,
                labels,
                decode,
            } => {
                let a = self.audit;
                let t = a.mechanism.num_partitions;
                let n_trials = a.n_llm + a.max_failures;
                let prompt = match task {
                    Task::Classification => PromptBuilder {
                        decode: *decode,
                        ..Default::default()
                    },
                    Task::Generation => PromptBuilder::for_signal(*decode, self.signal()),
                };
                let transport = match FileBatchTransport::load(responses, n_trials, t) {
                    Err(Error::Oracle(OracleError::Pending(_))) => {
                        let zero_shot = if task == Task::Generation
                            && a.threat_model == ThreatModel::BlackBox
                            && a.candidate_pool == CandidatePool::ZeroShot
                        {
                            a.mechanism.candidate_pool_size
                        } else {
                            0
                        };
                        let reqs = batch_requests(
                            &prompt,
                            &self.pair,
                            &self.query,
                            t,
                            n_trials,
                            a.mechanism.padding,
                            zero_shot,
                        )?;
                        ensure_parent(requests)?;
                        write_batch_requests(requests, &reqs)?;
                        return Err(CliError::Oracle(format!(
                            "responses pending: wrote {} requests to {}; answer them one per line in {} and rerun",
                            reqs.len(),
                            requests.display(),
                            responses.display()
                        )));
                    }
                    other => other?,
                };
                match task {
                    Task::Classification => {
                        job.run(&ExternalVoteOracle::new(transport, prompt, labels.clone())?)
                    }
                    Task::Generation => job.run(&ExternalEmbeddingOracle::new(
                        transport,
                        *decode,
                        self.signal().clone(),
                    )),
                }
            }
        }
    }
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Saves the resolved configuration next to the outputs.
fn echo_config(config: &RunConfig, command: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(&config.output_dir)?;
    let path = config.output_dir.join(format!("{command}.config.toml"));
    std::fs::write(path, config.to_toml()?)?;
    Ok(())
}

struct CollectJob<'a> {
    setup: &'a Setup<'a>,
}

impl WithOracle for CollectJob<'_> {
    type Output = ();

    fn run<O>(self, oracle: &O) -> Result<(), CliError>
    where
        O: Oracle,
        O::Response: AuditResponse,
    {
        let s = self.setup;
        let a = s.audit;
        let options = CollectOptions {
            seed: a.seed,
            workers: s.config.workers,
            padding: a.mechanism.padding,
            max_failures: a.max_failures,
        };
        let collection = collect(
            oracle,
            &s.pair,
            &s.query,
            a.mechanism.num_partitions,
            a.n_llm,
            &options,
        )?;
        let records = collection.records();
        let path = s.config.records_path();
        ensure_parent(&path)?;
        write_records(&path, &records)?;
        for h in Hypothesis::BOTH {
            println!("{}: {} rows", h.as_str(), collection.rows(h).len());
        }
        println!("failed calls: {}", collection.failures().len());
        println!("records: {} -> {}", records.len(), path.display());
        Ok(())
    }
}

pub fn cmd_collect(config: &RunConfig) -> Result<(), CliError> {
    let setup = Setup::new(config)?;
    config.oracle()?;
    echo_config(config, "collect")?;
    setup.dispatch(CollectJob { setup: &setup })
}

struct AuditJob<'a> {
    setup: &'a Setup<'a>,
}

impl WithOracle for AuditJob<'_> {
    type Output = ();

    fn run<O>(self, oracle: &O) -> Result<(), CliError>
    where
        O: Oracle,
        O::Response: AuditResponse,
    {
        let s = self.setup;
        let report = run_audit(
            s.audit,
            oracle,
            &s.pair,
            &s.query,
            s.signal.as_ref(),
            s.config.workers,
        )?;
        let json = s.config.report_json_path();
        let csv = s.config.report_csv_path();
        ensure_parent(&json)?;
        ensure_parent(&csv)?;
        report.write_json(&json)?;
        report.append_csv(&csv)?;
        let c = &report.counts;
        println!(
            "{} {}: T={} eps_theory={} sigma={:.6}",
            s.audit.task.as_str(),
            s.audit.threat_model.as_str(),
            s.audit.mechanism.num_partitions,
            s.audit.mechanism.eps_theory,
            report.sigma
        );
        println!(
            "tp={} fp={} fn={} tn={}",
            c.true_positives, c.false_positives, c.false_negatives, c.true_negatives
        );
        if let Some(t) = report.threshold {
            println!("tau: {t}");
        }
        println!("mu_lower: {:.6}", report.estimate.mu_lower);
        println!("eps_emp: {}", report.estimate.epsilon_emp);
        println!("report: {} (csv row appended to {})", json.display(), csv.display());
        Ok(())
    }
}

pub fn cmd_audit(config: &RunConfig) -> Result<(), CliError> {
    let setup = Setup::new(config)?;
    config.oracle()?;
    echo_config(config, "audit")?;
    setup.dispatch(AuditJob { setup: &setup })
}

pub fn cmd_simulate(config: &RunConfig) -> Result<(), CliError> {
    let sim = config
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [simulate] section".into()))?;
    let sigma = sim.sigma()?;
    let delta = Probability::new(sim.delta_target).map_err(CliError::config)?;
    if sim.t_values.is_empty() {
        return Err(CliError::Config("simulate.t_values is empty".into()));
    }
    let rows = sweep(sim.t_values.iter().copied(), sim.k_rule, sim.b, sigma, delta)
        .map_err(CliError::config)?;
    echo_config(config, "simulate")?;
    let path = config.sweep_csv_path();
    ensure_parent(&path)?;
    write_sweep_csv(BufWriter::new(File::create(&path)?), &rows)?;
    println!("sigma: {sigma}");
    println!("rows: {} -> {}", rows.len(), path.display());
    Ok(())
}

/// Exactly one of the three input modes.
pub enum Conversion {
    Mu { mu: f64, delta: f64 },
    Eps { eps: f64, delta: f64 },
    Counts {
        counts: AttackCounts,
        confidence: f64,
        delta: f64,
    },
}

fn prob(what: &str, v: f64) -> Result<Probability, CliError> {
    Probability::new(v).map_err(|_| CliError::Config(format!("{what} must lie in [0, 1], got {v}")))
}

pub fn cmd_convert(conversion: &Conversion) -> Result<(), CliError> {
    match *conversion {
        Conversion::Mu { mu, delta } => {
            let eps = eps_from_mu_delta(mu, prob("delta", delta)?)?;
            println!("mu: {mu}");
            println!("delta: {delta}");
            println!("epsilon: {eps}");
        }
        Conversion::Eps { eps, delta } => {
            let d = prob("delta", delta)?;
            let mu = mu_from_eps_delta(eps, d)?;
            println!("epsilon: {eps}");
            println!("delta: {delta}");
            println!("mu: {mu}");
            println!("delta_at_mu: {}", delta_from_eps_mu(eps, mu)?.value());
            println!("epsilon_round_trip: {}", eps_from_mu_delta(mu, d)?);
        }
        Conversion::Counts {
            counts,
            confidence,
            delta,
        } => {
            let est = audit_epsilon(&counts, prob("confidence", confidence)?, prob("delta", delta)?)?;
            println!(
                "tp={} fp={} fn={} tn={}",
                counts.true_positives, counts.false_positives, counts.false_negatives, counts.true_negatives
            );
            println!("tpr: {}", counts.tpr());
            println!("fpr: {}", counts.fpr());
            println!("confidence: {confidence}");
            println!("alpha_bar: {}", est.bounds.alpha_bar.value());
            println!("beta_bar: {}", est.bounds.beta_bar.value());
            println!("mu_lower: {}", est.mu_lower);
            println!("delta: {delta}");
            println!("epsilon: {}", est.epsilon_emp);
        }
    }
    Ok(())
}
