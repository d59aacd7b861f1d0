//! Adapter for an external responder (a hosted model behind a small JSON
//! contract), reached either over HTTP or through offline batch files.
//!
//! Request: `{template_id, rendered_prompt, decode: {temperature, max_tokens}}`.
//! Response: `{text}` with an optional `embedding` array.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AuditQuery, Oracle, OracleCall, OracleError, SignalPair, TemplateId};
use crate::error::{Error, Result};
use crate::mechanisms::{partition, EmbeddingVector, Exemplar, Hypothesis, NeighboringPair};
use crate::rng::AuditRng;

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeSettings {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        DecodeSettings {
            temperature: 0.0,
            max_tokens: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponderRequest {
    pub template_id: TemplateId,
    pub rendered_prompt: String,
    pub decode: DecodeSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponderResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

/// Delivers one request and returns the responder's answer.
pub trait Transport: Sync {
    fn send(
        &self,
        call: &OracleCall<'_>,
        request: &ResponderRequest,
    ) -> Result<ResponderResponse, OracleError>;
}

/// Fills the shipped templates for a call.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PromptBuilder {
    pub decode: DecodeSettings,
    /// Signal texts for generation templates; empty for classification.
    pub y1_text: String,
    pub y0_text: String,
}

impl PromptBuilder {
    pub fn for_signal(decode: DecodeSettings, pair: &SignalPair) -> Self {
        PromptBuilder {
            decode,
            y1_text: pair.y1_text.clone(),
            y0_text: pair.y0_text.clone(),
        }
    }

    pub fn build(
        &self,
        subset: &[Exemplar],
        query: &AuditQuery,
    ) -> Result<ResponderRequest, OracleError> {
        let context = subset
            .iter()
            .map(|e| e.to_string())
            .collect::<Vec<_>>()
            .join("\n\n");
        let mut values = BTreeMap::new();
        values.insert("formatted_context", context.clone());
        values.insert("exemplar_context", context);
        values.insert("query_article", query.canary.input.clone());
        values.insert("canary", query.canary.input.clone());
        values.insert("Y1_TARGET", self.y1_text.clone());
        values.insert("Y2_CONTROL", self.y0_text.clone());
        Ok(ResponderRequest {
            template_id: query.template,
            rendered_prompt: query.template.render(&values)?,
            decode: self.decode,
        })
    }
}

/// Maps response text to a class index by exact match after trimming.
fn match_label(labels: &[String], text: &str) -> Result<usize, OracleError> {
    let t = text.trim();
    labels
        .iter()
        .position(|l| l == t)
        .ok_or_else(|| OracleError::Parse(text.to_string()))
}

/// Vote oracle backed by an external responder.
pub struct ExternalVoteOracle<T> {
    transport: T,
    prompt: PromptBuilder,
    labels: Vec<String>,
}

impl<T: Transport> ExternalVoteOracle<T> {
    pub fn new(transport: T, prompt: PromptBuilder, labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::config("a vote oracle needs at least two labels"));
        }
        Ok(ExternalVoteOracle {
            transport,
            prompt,
            labels,
        })
    }
}

impl<T: Transport> Oracle for ExternalVoteOracle<T> {
    type Response = usize;

    fn respond(&self, call: &OracleCall<'_>, _rng: &mut AuditRng) -> Result<usize, OracleError> {
        let request = self.prompt.build(call.subset, call.query)?;
        let response = self.transport.send(call, &request)?;
        match_label(&self.labels, &response.text)
    }
}

/// Embedding oracle backed by an external responder.
///
/// A response embedding is normalized to unit length. Without one, the text
/// must equal one of the signal texts and that signal's embedding is used.
pub struct ExternalEmbeddingOracle<T> {
    transport: T,
    prompt: PromptBuilder,
    pair: SignalPair,
}

impl<T: Transport> ExternalEmbeddingOracle<T> {
    pub fn new(transport: T, decode: DecodeSettings, pair: SignalPair) -> Self {
        ExternalEmbeddingOracle {
            transport,
            prompt: PromptBuilder::for_signal(decode, &pair),
            pair,
        }
    }
}

impl<T: Transport> Oracle for ExternalEmbeddingOracle<T> {
    type Response = EmbeddingVector;

    fn respond(
        &self,
        call: &OracleCall<'_>,
        _rng: &mut AuditRng,
    ) -> Result<EmbeddingVector, OracleError> {
        let request = self.prompt.build(call.subset, call.query)?;
        let response = self.transport.send(call, &request)?;
        if let Some(v) = response.embedding {
            if v.len() != self.pair.dim() {
                return Err(OracleError::Parse(format!(
                    "embedding of dimension {} (expected {})",
                    v.len(),
                    self.pair.dim()
                )));
            }
            return EmbeddingVector::normalized(v).map_err(|e| OracleError::Parse(e.to_string()));
        }
        let t = response.text.trim();
        if t == self.pair.y1_text {
            Ok(self.pair.y1_embedding.clone())
        } else if t == self.pair.y0_text {
            Ok(self.pair.y0_embedding.clone())
        } else {
            Err(OracleError::Parse(response.text))
        }
    }
}

/// One JSON POST per call.
pub struct HttpTransport {
    url: String,
    auth: Option<(String, String)>,
    agent: ureq::Agent,
}

impl HttpTransport {
    /// `auth` is a header name and value; the value is normally read from
    /// the environment by the caller.
    pub fn new(url: impl Into<String>, auth: Option<(String, String)>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpTransport {
            url: url.into(),
            auth,
            agent,
        }
    }
}

impl Transport for HttpTransport {
    fn send(
        &self,
        _call: &OracleCall<'_>,
        request: &ResponderRequest,
    ) -> Result<ResponderResponse, OracleError> {
        let mut req = self.agent.post(&self.url);
        if let Some((name, value)) = &self.auth {
            req = req.header(name.as_str(), value.as_str());
        }
        let mut resp = req
            .send_json(request)
            .map_err(|e| OracleError::Transport(e.to_string()))?;
        resp.body_mut()
            .read_json::<ResponderResponse>()
            .map_err(|e| OracleError::Transport(e.to_string()))
    }
}

/// Offline batch mode: requests are written one per line in canonical order,
/// an external process answers them line by line, and the answers are read
/// back by position.
///
/// Line `(h·n_trials + trial)·T + part` holds hypothesis `h` (with = 0),
/// followed by zero-shot calls in draw order.
pub struct FileBatchTransport {
    responses: Vec<ResponderResponse>,
    n_trials: usize,
    num_partitions: usize,
}

impl FileBatchTransport {
    pub fn index(
        n_trials: usize,
        num_partitions: usize,
        h: Hypothesis,
        trial: u64,
        part: Option<usize>,
    ) -> usize {
        let h = match h {
            Hypothesis::WithCanary => 0,
            Hypothesis::WithoutCanary => 1,
        };
        match part {
            Some(p) => (h * n_trials + trial as usize) * num_partitions + p,
            None => 2 * n_trials * num_partitions + trial as usize,
        }
    }

    /// Loads the responses file. A missing file means the batch has not been
    /// answered yet and yields [`OracleError::Pending`].
    pub fn load(path: &Path, n_trials: usize, num_partitions: usize) -> Result<Self> {
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(OracleError::Pending(path.display().to_string()).into())
            }
            Err(e) => return Err(e.into()),
        };
        let mut responses = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            let r = serde_json::from_str(&line).map_err(|e| Error::Record {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            responses.push(r);
        }
        Ok(FileBatchTransport {
            responses,
            n_trials,
            num_partitions,
        })
    }
}

impl Transport for FileBatchTransport {
    fn send(
        &self,
        call: &OracleCall<'_>,
        _request: &ResponderRequest,
    ) -> Result<ResponderResponse, OracleError> {
        let i = Self::index(
            self.n_trials,
            self.num_partitions,
            call.hypothesis,
            call.trial,
            call.partition,
        );
        self.responses
            .get(i)
            .cloned()
            .ok_or_else(|| OracleError::Missing {
                ctx: call.hypothesis.as_str(),
                trial: call.trial,
                part: call.partition,
            })
    }
}

/// Every request of a collection run in batch-file order, followed by
/// `zero_shot` context-free calls.
pub fn batch_requests(
    prompt: &PromptBuilder,
    pair: &NeighboringPair,
    query: &AuditQuery,
    num_partitions: usize,
    n_trials: usize,
    padding: bool,
    zero_shot: usize,
) -> Result<Vec<ResponderRequest>> {
    let mut out = Vec::with_capacity(2 * n_trials * num_partitions + zero_shot);
    for h in Hypothesis::BOTH {
        let parts = partition(pair.context(h), num_partitions, padding)?;
        for _ in 0..n_trials {
            for subset in &parts {
                out.push(prompt.build(subset, query)?);
            }
        }
    }
    for _ in 0..zero_shot {
        out.push(prompt.build(&[], query)?);
    }
    Ok(out)
}

/// Writes a batch request file, replacing any previous one.
pub fn write_batch_requests(path: &Path, requests: &[ResponderRequest]) -> Result<PathBuf> {
    let mut buf = String::new();
    for r in requests {
        buf.push_str(&serde_json::to_string(r)?);
        buf.push('\n');
    }
    let mut f = File::create(path)?;
    f.write_all(buf.as_bytes())?;
    Ok(path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{collect, CollectOptions};
    use std::io::Read;
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    fn setup() -> (NeighboringPair, AuditQuery) {
        let base: Vec<Exemplar> = (0..4).map(|i| Exemplar::new(format!("article {i}"), "x")).collect();
        let canary = Exemplar::new("the canary article", "x");
        let pair = NeighboringPair::by_replacement(base, canary.clone(), 2).unwrap();
        (pair, AuditQuery::new(canary, TemplateId::AuditClassification))
    }

    /// Answers "Yes" when the prompt mentions the canary twice (context and
    /// query), "No" otherwise.
    struct Scripted;

    impl Transport for Scripted {
        fn send(
            &self,
            _call: &OracleCall<'_>,
            request: &ResponderRequest,
        ) -> Result<ResponderResponse, OracleError> {
            let hits = request.rendered_prompt.matches("the canary article").count();
            Ok(ResponderResponse {
                text: if hits > 1 { " Yes\n".into() } else { "No".into() },
                embedding: None,
            })
        }
    }

    #[test]
    fn prompt_contains_context_and_query() {
        let (pair, q) = setup();
        let r = PromptBuilder::default()
            .build(pair.with_canary().exemplars(), &q)
            .unwrap();
        assert!(r.rendered_prompt.contains("Input: article 0\nOutput: x"));
        assert!(r.rendered_prompt.contains("<query>\nthe canary article\n</query>"));
        assert!(!r.rendered_prompt.contains('{'));
    }

    #[test]
    fn labels_match_exactly_after_trim() {
        let labels = vec!["Yes".to_string(), "No".to_string()];
        assert_eq!(match_label(&labels, " Yes\n").unwrap(), 0);
        assert_eq!(match_label(&labels, "No").unwrap(), 1);
        assert!(matches!(match_label(&labels, "yes"), Err(OracleError::Parse(_))));
        assert!(matches!(match_label(&labels, "Maybe"), Err(OracleError::Parse(_))));
    }

    #[test]
    fn vote_oracle_over_scripted_transport() {
        let (pair, q) = setup();
        let o = ExternalVoteOracle::new(
            Scripted,
            PromptBuilder::default(),
            vec!["Yes".into(), "No".into()],
        )
        .unwrap();
        let c = collect(&o, &pair, &q, 4, 2, &CollectOptions::new(0)).unwrap();
        let with = c.clean_votes(Hypothesis::WithCanary, 2).unwrap();
        assert_eq!(with[0].counts(), &[1, 3]);
        let without = c.clean_votes(Hypothesis::WithoutCanary, 2).unwrap();
        assert_eq!(without[1].counts(), &[0, 4]);
    }

    #[test]
    fn embedding_responses_are_normalized_or_mapped() {
        struct Fixed(ResponderResponse);
        impl Transport for Fixed {
            fn send(
                &self,
                _: &OracleCall<'_>,
                _: &ResponderRequest,
            ) -> Result<ResponderResponse, OracleError> {
                Ok(self.0.clone())
            }
        }
        let (_, q) = setup();
        let signal = SignalPair::synthetic(0.5, 3).unwrap();
        let call = OracleCall {
            hypothesis: Hypothesis::WithCanary,
            trial: 0,
            partition: Some(0),
            subset: &[],
            query: &q,
        };
        let mut rng = crate::rng::derived_rng(0, &[]);
        let o = ExternalEmbeddingOracle::new(
            Fixed(ResponderResponse {
                text: String::new(),
                embedding: Some(vec![3.0, 0.0, 4.0]),
            }),
            DecodeSettings::default(),
            signal.clone(),
        );
        let e = o.respond(&call, &mut rng).unwrap();
        assert_eq!(e.components(), &[0.6, 0.0, 0.8]);

        let o = ExternalEmbeddingOracle::new(
            Fixed(ResponderResponse {
                text: "y0 ".into(),
                embedding: None,
            }),
            DecodeSettings::default(),
            signal.clone(),
        );
        assert_eq!(o.respond(&call, &mut rng).unwrap(), signal.y0_embedding);

        let o = ExternalEmbeddingOracle::new(
            Fixed(ResponderResponse {
                text: "other".into(),
                embedding: None,
            }),
            DecodeSettings::default(),
            signal,
        );
        assert!(matches!(o.respond(&call, &mut rng), Err(OracleError::Parse(_))));
    }

    #[test]
    fn batch_files_round_trip() {
        let (pair, q) = setup();
        let dir = tempfile::tempdir().unwrap();
        let req_path = dir.path().join("requests.jsonl");
        let resp_path = dir.path().join("responses.jsonl");
        assert!(matches!(
            FileBatchTransport::load(&resp_path, 3, 4),
            Err(Error::Oracle(OracleError::Pending(_)))
        ));
        let requests = batch_requests(&PromptBuilder::default(), &pair, &q, 4, 3, false, 0).unwrap();
        assert_eq!(requests.len(), 24);
        write_batch_requests(&req_path, &requests).unwrap();

        // Stand-in for the external process.
        let mut answers = String::new();
        for line in std::fs::read_to_string(&req_path).unwrap().lines() {
            let r: ResponderRequest = serde_json::from_str(line).unwrap();
            let resp = Scripted.send(
                &OracleCall {
                    hypothesis: Hypothesis::WithCanary,
                    trial: 0,
                    partition: None,
                    subset: &[],
                    query: &q,
                },
                &r,
            );
            answers.push_str(&serde_json::to_string(&resp.unwrap()).unwrap());
            answers.push('\n');
        }
        std::fs::write(&resp_path, answers).unwrap();

        let t = FileBatchTransport::load(&resp_path, 3, 4).unwrap();
        let o = ExternalVoteOracle::new(t, PromptBuilder::default(), vec!["Yes".into(), "No".into()])
            .unwrap();
        let c = collect(&o, &pair, &q, 4, 3, &CollectOptions::new(0)).unwrap();
        let direct = ExternalVoteOracle::new(
            Scripted,
            PromptBuilder::default(),
            vec!["Yes".into(), "No".into()],
        )
        .unwrap();
        let d = collect(&direct, &pair, &q, 4, 3, &CollectOptions::new(0)).unwrap();
        assert_eq!(c.records(), d.records());
    }

    #[test]
    fn http_transport_posts_json_with_configured_header() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(String::new()));
        let seen2 = Arc::clone(&seen);
        let server = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            // Read headers, then the declared body length.
            loop {
                let n = stream.read(&mut chunk).unwrap();
                buf.extend_from_slice(&chunk[..n]);
                let text = String::from_utf8_lossy(&buf).to_string();
                if let Some(pos) = text.find("\r\n\r\n") {
                    let len = text
                        .lines()
                        .find_map(|l| {
                            let l = l.to_ascii_lowercase();
                            l.strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap())
                        })
                        .unwrap_or(0);
                    if buf.len() >= pos + 4 + len {
                        break;
                    }
                }
                if n == 0 {
                    break;
                }
            }
            *seen2.lock().unwrap() = String::from_utf8_lossy(&buf).to_string();
            let body = r#"{"text":"Yes"}"#;
            let reply = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            stream.write_all(reply.as_bytes()).unwrap();
        });

        let t = HttpTransport::new(
            format!("http://{addr}/v1/respond"),
            Some(("X-Audit-Key".into(), "secret".into())),
            Duration::from_secs(10),
        );
        let (pair, q) = setup();
        let o = ExternalVoteOracle::new(t, PromptBuilder::default(), vec!["Yes".into(), "No".into()])
            .unwrap();
        let call = OracleCall {
            hypothesis: Hypothesis::WithCanary,
            trial: 0,
            partition: Some(0),
            subset: pair.with_canary().exemplars(),
            query: &q,
        };
        let mut rng = crate::rng::derived_rng(0, &[]);
        assert_eq!(o.respond(&call, &mut rng).unwrap(), 0);
        server.join().unwrap();

        let raw = seen.lock().unwrap().clone();
        assert!(raw.starts_with("POST /v1/respond "));
        assert!(raw.to_ascii_lowercase().contains("x-audit-key: secret"));
        let body = &raw[raw.find("\r\n\r\n").unwrap() + 4..];
        let req: ResponderRequest = serde_json::from_str(body).unwrap();
        assert_eq!(req.template_id, TemplateId::AuditClassification);
        assert_eq!(req.decode, DecodeSettings::default());
    }
}
