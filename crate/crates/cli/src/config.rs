//! The run configuration: one TOML document plus `--set key=value` overrides.

use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use dpaudit::audit::{AuditConfig, Task, ThreatModel};
use dpaudit::gaussian_model::KRule;
use dpaudit::mechanisms::{Exemplar, NeighboringPair};
use dpaudit::oracles::{AuditQuery, DecodeSettings, SignalPair, SignalPreset, TemplateId};

use crate::exit::CliError;

#[derive(Clone, Debug, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Worker threads; 0 uses every core. Never changes results.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub audit: Option<AuditConfig>,
    #[serde(default)]
    pub context: ContextConfig,
    pub oracle: Option<OracleConfig>,
    pub signal: Option<SignalConfig>,
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub paths: PathsConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Neighboring {
    /// The canary takes the place of the exemplar at `canary_index`.
    #[default]
    Replacement,
    /// The canary is inserted at `canary_index`.
    Insertion,
}

fn default_canary() -> Exemplar {
    Exemplar::new("The canary sentence appears only in this exemplar.", "")
}

#[derive(Clone, Debug, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ContextConfig {
    /// Explicit exemplars. When empty, `num_exemplars` placeholders are used.
    #[serde(default)]
    pub exemplars: Vec<Exemplar>,
    /// Placeholder count when `exemplars` is empty; defaults to T.
    pub num_exemplars: Option<usize>,
    #[serde(default = "default_canary")]
    pub canary: Exemplar,
    #[serde(default)]
    pub neighboring: Neighboring,
    #[serde(default)]
    pub canary_index: usize,
    /// Defaults to the audit template matching the task and threat model.
    pub template: Option<TemplateId>,
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig {
            exemplars: Vec::new(),
            num_exemplars: None,
            canary: default_canary(),
            neighboring: Neighboring::default(),
            canary_index: 0,
            template: None,
        }
    }
}

impl ContextConfig {
    pub fn build(&self, audit: &AuditConfig) -> Result<(NeighboringPair, AuditQuery), CliError> {
        let base = if self.exemplars.is_empty() {
            let n = self.num_exemplars.unwrap_or(audit.mechanism.num_partitions);
            (0..n)
                .map(|i| Exemplar::new(format!("Exemplar {i}."), ""))
                .collect()
        } else {
            self.exemplars.clone()
        };
        let pair = match self.neighboring {
            Neighboring::Replacement => {
                NeighboringPair::by_replacement(base, self.canary.clone(), self.canary_index)
            }
            Neighboring::Insertion => {
                NeighboringPair::by_insertion(base, self.canary.clone(), self.canary_index)
            }
        }
        .map_err(CliError::config)?;
        let template = self.template.unwrap_or(match (audit.task, audit.threat_model) {
            (Task::Classification, _) => TemplateId::AuditClassification,
            (Task::Generation, ThreatModel::WhiteBox) => TemplateId::AuditGenerationWhiteBox,
            (Task::Generation, ThreatModel::BlackBox) => TemplateId::AuditGenerationBlackBox,
        });
        Ok((pair, AuditQuery::new(self.canary.clone(), template)))
    }
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_labels() -> Vec<String> {
    vec!["Yes".into(), "No".into()]
}

#[derive(Clone, Debug, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleConfig {
    /// Simulated classifier that answers "yes" exactly when the canary is in
    /// its subset, flipped with `flip_probability`.
    Detector {
        #[serde(default)]
        flip_probability: f64,
    },
    /// Simulated generator emitting the y₁ embedding when the canary is
    /// visible and y₀ otherwise.
    EmbeddingDetector {
        #[serde(default)]
        flip_probability: f64,
    },
    /// Responses recorded by an earlier `collect`.
    Replay { path: PathBuf },
    /// One HTTP POST per call.
    Http {
        url: String,
        /// Header carrying the credential, e.g. "Authorization".
        auth_header: Option<String>,
        /// Environment variable holding the header value.
        auth_env: Option<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default = "default_labels")]
        labels: Vec<String>,
        #[serde(default)]
        decode: DecodeSettings,
    },
    /// Requests written to a JSONL file, answered offline line by line.
    FileBatch {
        requests: PathBuf,
        responses: PathBuf,
        #[serde(default = "default_labels")]
        labels: Vec<String>,
        #[serde(default)]
        decode: DecodeSettings,
    },
}

fn default_dim() -> usize {
    16
}

/// Signal outputs for generation audits: a tabulated preset, or synthetic
/// embeddings at `distance`.
#[derive(Clone, Debug, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    pub preset: Option<String>,
    pub distance: Option<f64>,
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub y1: Option<String>,
    pub y0: Option<String>,
}

impl SignalConfig {
    pub fn build(&self) -> Result<SignalPair, CliError> {
        let mut pair = match (&self.preset, self.distance) {
            (Some(name), None) => SignalPreset::by_name(name)
                .ok_or_else(|| {
                    let known: Vec<&str> = SignalPreset::all().iter().map(|p| p.name.as_str()).collect();
                    CliError::Config(format!(
                        "unknown signal preset {name:?}; known: {}",
                        known.join(", ")
                    ))
                })?
                .synthesize(self.dim),
            (None, Some(d)) => SignalPair::synthetic(d, self.dim),
            _ => {
                return Err(CliError::Config(
                    "signal needs exactly one of `preset` or `distance`".into(),
                ))
            }
        }
        .map_err(CliError::config)?;
        if let Some(y1) = &self.y1 {
            pair.y1_text = y1.clone();
        }
        if let Some(y0) = &self.y0 {
            pair.y0_text = y0.clone();
        }
        Ok(pair)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub t_values: Vec<usize>,
    pub k_rule: KRule,
    pub b: f64,
    /// Vote noise; alternatively derived from `eps_theory` and `delta`.
    pub sigma: Option<f64>,
    pub eps_theory: Option<f64>,
    pub delta: Option<f64>,
    #[serde(default = "default_delta_target")]
    pub delta_target: f64,
}

fn default_delta_target() -> f64 {
    dpaudit::gdp::DEFAULT_DELTA_TARGET
}

impl SimulateConfig {
    pub fn sigma(&self) -> Result<f64, CliError> {
        match (self.sigma, self.eps_theory, self.delta) {
            (Some(s), None, None) => Ok(s),
            (None, Some(e), Some(d)) => {
                if !(e > 0.0 && d > 0.0 && d < 1.0) {
                    return Err(CliError::Config(format!(
                        "simulate needs eps_theory > 0 and delta in (0, 1), got {e} and {d}"
                    )));
                }
                Ok(dpaudit::mechanisms::voting_noise_scale(e, d))
            }
            _ => Err(CliError::Config(
                "simulate needs either `sigma` or both `eps_theory` and `delta`".into(),
            )),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Clean-response records written by `collect`.
    pub records: Option<PathBuf>,
    pub report_json: Option<PathBuf>,
    /// Appended to, one row per audit.
    pub report_csv: Option<PathBuf>,
    pub sweep_csv: Option<PathBuf>,
}

impl RunConfig {
    fn resolve(&self, p: &Option<PathBuf>, default: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.output_dir.join(default))
    }

    pub fn records_path(&self) -> PathBuf {
        self.resolve(&self.paths.records, "clean_records.jsonl")
    }

    pub fn report_json_path(&self) -> PathBuf {
        self.resolve(&self.paths.report_json, "report.json")
    }

    pub fn report_csv_path(&self) -> PathBuf {
        self.resolve(&self.paths.report_csv, "reports.csv")
    }

    pub fn sweep_csv_path(&self) -> PathBuf {
        self.resolve(&self.paths.sweep_csv, "sweep.csv")
    }

    pub fn audit(&self) -> Result<&AuditConfig, CliError> {
        let a = self
            .audit
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [audit] section".into()))?;
        a.validate().map_err(CliError::config)?;
        Ok(a)
    }

    pub fn oracle(&self) -> Result<&OracleConfig, CliError> {
        self.oracle
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [oracle] section".into()))
    }

    pub fn signal(&self) -> Result<Option<SignalPair>, CliError> {
        self.signal.as_ref().map(SignalConfig::build).transpose()
    }

    /// Reads `path`, applies overrides and deserializes. Unknown keys,
    /// wrong types and missing required fields are all rejected here.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let config: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(a) = &config.audit {
            a.validate().map_err(CliError::config)?;
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// `a.b.c=value`: the value is parsed as a TOML literal, falling back to a
/// bare string.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {spec:?} is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key {key:?}")));
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {key:?}: {part:?} is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub fn schema_json() -> String {
    let schema = schemars::schema_for!(RunConfig);
    serde_json::to_string_pretty(&schema).expect("schema serializes")
}
