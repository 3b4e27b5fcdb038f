//! Uniform answer-backend abstraction: deterministic mocks for tests plus a
//! generic HTTP client for real providers.
//!
//! Wire contract for HTTP backends: POST JSON
//! `{"model", "prompt", "temperature", "seed"}` → `{"text"}`. Mock backends
//! live behind `mock:<name>` endpoints and are pure functions of
//! (question, context, trial_seed).

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{fnv1a64, Embedder};
use crate::error::{Error, Result, Stage};
use crate::retrieval::{retrieve_context, RetrievalResult, VectorIndex};

/// Sampling temperature used throughout the experiments unless overridden.
pub const DEFAULT_TEMPERATURE: f64 = 0.5;
/// Retrieval depth for RAG backends that do not set one.
pub const DEFAULT_RETRIEVAL_K: usize = 4;
/// Default per-request timeout.
pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;
/// Retries after a transport error (protocol and parse errors never retry).
pub const MAX_TRANSPORT_RETRIES: usize = 2;
/// Shipped prompt template for context-conditioned answering.
pub const DEFAULT_RAG_TEMPLATE_ID: &str = "rag-default";

/// How a backend consumes a question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Fine-tuned on (question, answer) pairs: question in, answer out.
    FinetunedQa,
    /// Fine-tuned on (question, context, answer) triples: the dataset context
    /// accompanies the question.
    FinetunedCtx,
    /// Retrieval-augmented: the top-k retrieved chunks accompany the question.
    Rag,
}

/// Declarative description of one answer backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendSpec {
    pub model_id: String,
    pub kind: BackendKind,
    /// `mock:<name>` or an HTTP(S) URL.
    pub endpoint: String,
    /// Sampling temperature; falls back to the run-level temperature
    /// (default 0.5) when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Prompt template for context-conditioned kinds. Either a shipped id or
    /// `inline:<template text>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template_id: Option<String>,
    /// Retrieval depth (rag only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_k: Option<usize>,
    /// Vector index attached to a rag backend, as written by the `index`
    /// command (directory containing index.jsonl + chunks.jsonl).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index_path: Option<PathBuf>,
    /// Embedder id used for retrieval with a rag backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder: Option<String>,
    /// Name of an environment variable holding a bearer token for the
    /// endpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
}

fn default_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT_MS
}

impl BackendSpec {
    /// A minimal spec pointing at a mock endpoint.
    pub fn mock(model_id: &str, kind: BackendKind, endpoint: &str) -> Self {
        Self {
            model_id: model_id.to_string(),
            kind,
            endpoint: endpoint.to_string(),
            temperature: None,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            prompt_template_id: None,
            retrieval_k: None,
            index_path: None,
            embedder: None,
            auth_env: None,
        }
    }

    pub fn effective_temperature(&self, run_default: f64) -> f64 {
        self.temperature.unwrap_or(run_default)
    }

    pub fn effective_template_id(&self) -> &str {
        self.prompt_template_id
            .as_deref()
            .unwrap_or(DEFAULT_RAG_TEMPLATE_ID)
    }

    pub fn effective_retrieval_k(&self) -> usize {
        self.retrieval_k.unwrap_or(DEFAULT_RETRIEVAL_K)
    }

    /// Structural checks that do not need the runtime environment.
    pub fn validate(&self) -> Result<()> {
        if self.model_id.is_empty() {
            return Err(Error::Config("backend model_id must not be empty".into()));
        }
        if let Some(t) = self.temperature {
            if !(0.0..=2.0).contains(&t) {
                return Err(Error::Config(format!(
                    "temperature {t} out of range [0, 2] for {}",
                    self.model_id
                )));
            }
        }
        if self.timeout_ms == 0 {
            return Err(Error::Config(format!(
                "timeout_ms must be positive for {}",
                self.model_id
            )));
        }
        if self.retrieval_k == Some(0) {
            return Err(Error::Config(format!(
                "retrieval_k must be positive for {}",
                self.model_id
            )));
        }
        Ok(())
    }
}

/// One question as a backend sees it. `context` carries the dataset context
/// for finetuned_ctx backends and the retrieved augmented context for rag
/// backends; it must be absent for finetuned_qa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub question: String,
    pub context: Option<String>,
    pub temperature: f64,
    pub trial_seed: u64,
}

/// A backend's reply. `ok == false` exactly when `error` is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
    pub ok: bool,
    pub error: Option<String>,
    pub latency_ms: f64,
}

impl GenerationResponse {
    pub fn success(text: &str, latency_ms: f64) -> Self {
        Self {
            text: text.trim().to_string(),
            ok: true,
            error: None,
            latency_ms,
        }
    }

    pub fn failure(error: &str) -> Self {
        Self {
            text: String::new(),
            ok: false,
            error: Some(error.to_string()),
            latency_ms: 0.0,
        }
    }
}

fn builtin_template(id: &str) -> Option<&'static str> {
    match id {
        "rag-default" => Some("Context:\n{context}\n\nQ: {question}\nA:"),
        _ => None,
    }
}

/// Substitute `{question}` and `{context}` into a template.
///
/// `template_id` is a shipped id or `inline:<template>`. Both placeholders
/// must be present; substitution is literal with no other transformation.
pub fn render_prompt(template_id: &str, question: &str, context: &str) -> Result<String> {
    let template = match template_id.strip_prefix("inline:") {
        Some(inline) => inline,
        None => builtin_template(template_id).ok_or_else(|| {
            Error::Config(format!("unknown prompt template {template_id:?}"))
        })?,
    };
    for placeholder in ["{question}", "{context}"] {
        if !template.contains(placeholder) {
            return Err(Error::Config(format!(
                "template {template_id:?} is missing the {placeholder} placeholder"
            )));
        }
    }
    // Single pass so substituted text is never re-scanned.
    let mut out = String::with_capacity(template.len() + question.len() + context.len());
    let mut rest = template;
    while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        if let Some(tail) = rest.strip_prefix("{question}") {
            out.push_str(question);
            rest = tail;
        } else if let Some(tail) = rest.strip_prefix("{context}") {
            out.push_str(context);
            rest = tail;
        } else {
            out.push('{');
            rest = &rest[1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Shared state the mock roster draws on: the reference answers of the eval
/// set (for echo/noisy mocks) and the fixed text of the constant mock.
#[derive(Debug, Clone, Default)]
pub struct MockEnv {
    pub reference_answers: HashMap<String, String>,
    pub constant_text: String,
}

impl MockEnv {
    pub fn with_references<'a>(
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Self {
        Self {
            reference_answers: pairs
                .into_iter()
                .map(|(q, a)| (q.to_string(), a.to_string()))
                .collect(),
            constant_text: String::new(),
        }
    }
}

#[derive(Debug, Clone)]
enum MockKind {
    /// Returns the reference answer for the question.
    EchoReference,
    /// Returns the reference answer with seed-controlled token dropout.
    NoisyReference { dropout: f64 },
    /// Returns a fixed text (endpoint param, falling back to the mock env).
    Constant { text: Option<String> },
    /// Always fails.
    FailAlways,
    /// Returns the rendered prompt verbatim.
    EchoPrompt,
}

fn parse_mock(name: &str) -> Result<MockKind> {
    let (base, params) = match name.split_once('?') {
        Some((b, p)) => (b, Some(p)),
        None => (name, None),
    };
    match base {
        "echo-reference" => Ok(MockKind::EchoReference),
        "noisy-reference" => {
            let mut dropout = 0.2;
            if let Some(params) = params {
                for param in params.split('&') {
                    match param.split_once('=') {
                        Some(("dropout", v)) => {
                            dropout = v.parse().map_err(|_| {
                                Error::Config(format!("bad dropout value {v:?}"))
                            })?;
                        }
                        _ => {
                            return Err(Error::Config(format!(
                                "unknown mock parameter {param:?}"
                            )))
                        }
                    }
                }
            }
            if !(0.0..=1.0).contains(&dropout) {
                return Err(Error::Config(format!("dropout {dropout} out of [0, 1]")));
            }
            Ok(MockKind::NoisyReference { dropout })
        }
        "constant" => {
            let mut text = None;
            if let Some(params) = params {
                for param in params.split('&') {
                    match param.split_once('=') {
                        // '+' stands in for a space and "\n" for a newline,
                        // e.g. constant?text=Q:+what\nA:+that
                        Some(("text", v)) => {
                            text = Some(v.replace("\\n", "\n").replace('+', " "))
                        }
                        _ => {
                            return Err(Error::Config(format!(
                                "unknown mock parameter {param:?}"
                            )))
                        }
                    }
                }
            }
            Ok(MockKind::Constant { text })
        }
        "fail-always" => Ok(MockKind::FailAlways),
        "echo-prompt" => Ok(MockKind::EchoPrompt),
        other => Err(Error::Config(format!("unknown mock backend {other:?}"))),
    }
}

enum Transport {
    Mock { kind: MockKind, env: Arc<MockEnv> },
    #[cfg(feature = "http")]
    Http(http_client::HttpTransport),
}

/// A resolved, callable backend.
pub struct Backend {
    spec: BackendSpec,
    transport: Transport,
}

impl Backend {
    /// Resolve a spec against the mock environment. HTTP endpoints build a
    /// client with the spec's timeout and optional bearer token.
    pub fn resolve(spec: BackendSpec, env: &Arc<MockEnv>) -> Result<Backend> {
        spec.validate()?;
        let transport = if let Some(name) = spec.endpoint.strip_prefix("mock:") {
            Transport::Mock {
                kind: parse_mock(name)?,
                env: Arc::clone(env),
            }
        } else if spec.endpoint.starts_with("http://") || spec.endpoint.starts_with("https://") {
            #[cfg(feature = "http")]
            {
                Transport::Http(http_client::HttpTransport::new(&spec)?)
            }
            #[cfg(not(feature = "http"))]
            {
                return Err(Error::Config(format!(
                    "endpoint {:?} needs the `http` feature",
                    spec.endpoint
                )));
            }
        } else {
            return Err(Error::Config(format!(
                "endpoint {:?} is neither mock:<name> nor an HTTP URL",
                spec.endpoint
            )));
        };
        Ok(Backend { spec, transport })
    }

    pub fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    pub fn model_id(&self) -> &str {
        &self.spec.model_id
    }

    pub fn endpoint(&self) -> &str {
        &self.spec.endpoint
    }

    fn validate_request(&self, req: &GenerationRequest) -> Result<()> {
        match (self.spec.kind, req.context.is_some()) {
            (BackendKind::FinetunedQa, true) => Err(Error::Config(format!(
                "{} takes no context (kind finetuned_qa)",
                self.spec.model_id
            ))),
            (BackendKind::FinetunedCtx | BackendKind::Rag, false) => Err(Error::Config(
                format!("{} needs a context", self.spec.model_id),
            )),
            _ => Ok(()),
        }
    }

    /// The exact prompt the transport will send for `req`.
    pub fn build_prompt(&self, req: &GenerationRequest) -> Result<String> {
        match self.spec.kind {
            // The outbound payload of a finetuned_qa backend carries the bare
            // question and no context text.
            BackendKind::FinetunedQa => Ok(req.question.clone()),
            BackendKind::FinetunedCtx | BackendKind::Rag => render_prompt(
                self.spec.effective_template_id(),
                &req.question,
                req.context.as_deref().unwrap_or(""),
            ),
        }
    }

    fn dispatch(&self, prompt: &str, req: &GenerationRequest) -> Result<GenerationResponse> {
        match &self.transport {
            Transport::Mock { kind, env } => Ok(mock_respond(
                kind,
                env,
                &self.spec.model_id,
                &req.question,
                prompt,
                req.trial_seed,
            )),
            #[cfg(feature = "http")]
            Transport::Http(http) => http.send(
                &self.spec.model_id,
                prompt,
                req.temperature,
                req.trial_seed,
            ),
        }
    }

    /// Answer one request. The caller supplies any context (retrieval never
    /// happens here); configuration problems are `Err`, runtime failures from
    /// mocks come back as `ok == false` responses, and HTTP
    /// transport/protocol/parse failures are typed errors.
    pub fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse> {
        self.validate_request(req)?;
        let prompt = self.build_prompt(req)?;
        self.dispatch(&prompt, req)
    }

    /// Raw completion of an arbitrary prompt, used for QA-pair generation.
    /// Mock backends treat the whole prompt as their lookup key.
    pub fn complete(&self, prompt: &str, seed: u64) -> Result<GenerationResponse> {
        match &self.transport {
            Transport::Mock { kind, env } => Ok(mock_respond(
                kind,
                env,
                &self.spec.model_id,
                prompt,
                prompt,
                seed,
            )),
            #[cfg(feature = "http")]
            Transport::Http(http) => http.send(
                &self.spec.model_id,
                prompt,
                self.spec.effective_temperature(DEFAULT_TEMPERATURE),
                seed,
            ),
        }
    }

    /// Full query path: retrieve (rag only) → render → generate. Errors are
    /// tagged with the stage they came from; the retrieval audit is returned
    /// alongside the answer.
    pub fn answer_question(
        &self,
        question: &str,
        dataset_context: Option<&str>,
        index: Option<&VectorIndex>,
        embedder: Option<&dyn Embedder>,
        temperature: f64,
        trial_seed: u64,
    ) -> Result<(GenerationResponse, Option<RetrievalResult>)> {
        let model_id = &self.spec.model_id;
        let (context, retrieval) = match self.spec.kind {
            BackendKind::FinetunedQa => (None, None),
            BackendKind::FinetunedCtx => {
                let ctx = dataset_context.ok_or_else(|| {
                    Error::Config(format!("{model_id} needs the dataset context"))
                        .at_stage(Stage::Render, model_id)
                })?;
                (Some(ctx.to_string()), None)
            }
            BackendKind::Rag => {
                let index = index.ok_or_else(|| {
                    Error::Config(format!("{model_id} is a rag backend but has no index"))
                        .at_stage(Stage::Retrieve, model_id)
                })?;
                let embedder = embedder.ok_or_else(|| {
                    Error::Config(format!("{model_id} is a rag backend but has no embedder"))
                        .at_stage(Stage::Retrieve, model_id)
                })?;
                let rr =
                    retrieve_context(question, index, embedder, self.spec.effective_retrieval_k())
                        .map_err(|e| e.at_stage(Stage::Retrieve, model_id))?;
                (Some(rr.augmented_context.clone()), Some(rr))
            }
        };
        let req = GenerationRequest {
            question: question.to_string(),
            context,
            temperature,
            trial_seed,
        };
        self.validate_request(&req)
            .map_err(|e| e.at_stage(Stage::Render, model_id))?;
        let prompt = self
            .build_prompt(&req)
            .map_err(|e| e.at_stage(Stage::Render, model_id))?;
        let response = self
            .dispatch(&prompt, &req)
            .map_err(|e| e.at_stage(Stage::Generate, model_id))?;
        Ok((response, retrieval))
    }
}

/// Pure mock response: a function of (question, prompt, trial_seed) only.
fn mock_respond(
    kind: &MockKind,
    env: &MockEnv,
    model_id: &str,
    question: &str,
    prompt: &str,
    trial_seed: u64,
) -> GenerationResponse {
    match kind {
        MockKind::EchoReference => match env.reference_answers.get(question) {
            Some(answer) => GenerationResponse::success(answer, 0.0),
            None => GenerationResponse::failure(&format!(
                "no reference answer for question {question:?}"
            )),
        },
        MockKind::NoisyReference { dropout } => match env.reference_answers.get(question) {
            Some(answer) => {
                let mut seed_input = Vec::new();
                seed_input.extend_from_slice(model_id.as_bytes());
                seed_input.push(0x1f);
                seed_input.extend_from_slice(question.as_bytes());
                seed_input.push(0x1f);
                seed_input.extend_from_slice(&trial_seed.to_le_bytes());
                let mut rng = ChaCha20Rng::seed_from_u64(fnv1a64(&seed_input));
                let kept: Vec<&str> = answer
                    .split_whitespace()
                    .filter(|_| rng.random::<f64>() >= *dropout)
                    .collect();
                GenerationResponse::success(&kept.join(" "), 0.0)
            }
            None => GenerationResponse::failure(&format!(
                "no reference answer for question {question:?}"
            )),
        },
        MockKind::Constant { text } => {
            GenerationResponse::success(text.as_deref().unwrap_or(&env.constant_text), 0.0)
        }
        MockKind::FailAlways => GenerationResponse::failure("injected failure"),
        MockKind::EchoPrompt => GenerationResponse::success(prompt, 0.0),
    }
}

#[cfg(feature = "http")]
mod http_client {
    //! Generic HTTP transport speaking the toolkit wire contract.

    use std::time::{Duration, Instant};

    use serde::{Deserialize, Serialize};
    use ureq::Agent;

    use super::{BackendSpec, GenerationResponse, MAX_TRANSPORT_RETRIES};
    use crate::error::{Error, Result};

    #[derive(Serialize)]
    struct WireRequest<'a> {
        model: &'a str,
        prompt: &'a str,
        temperature: f64,
        seed: u64,
    }

    #[derive(Deserialize)]
    struct WireResponse {
        text: String,
    }

    pub(super) struct HttpTransport {
        endpoint: String,
        agent: Agent,
        bearer: Option<String>,
    }

    impl HttpTransport {
        pub(super) fn new(spec: &BackendSpec) -> Result<Self> {
            let bearer = match &spec.auth_env {
                Some(var) => Some(std::env::var(var).map_err(|_| {
                    Error::Config(format!(
                        "auth environment variable {var:?} is not set for {}",
                        spec.model_id
                    ))
                })?),
                None => None,
            };
            let config = Agent::config_builder()
                .timeout_global(Some(Duration::from_millis(spec.timeout_ms)))
                .http_status_as_error(false)
                .build();
            Ok(Self {
                endpoint: spec.endpoint.clone(),
                agent: Agent::new_with_config(config),
                bearer,
            })
        }

        fn classify(&self, e: ureq::Error) -> Error {
            match e {
                ureq::Error::BadUri(_) | ureq::Error::Http(_) => {
                    Error::Config(format!("bad request for {}: {e}", self.endpoint))
                }
                other => Error::Transport {
                    endpoint: self.endpoint.clone(),
                    message: other.to_string(),
                },
            }
        }

        fn send_once(&self, payload: &str) -> Result<String> {
            let mut request = self
                .agent
                .post(&self.endpoint)
                .header("content-type", "application/json");
            if let Some(token) = &self.bearer {
                request = request.header("authorization", format!("Bearer {token}"));
            }
            let mut response = request.send(payload).map_err(|e| self.classify(e))?;
            let status = response.status().as_u16();
            if !(200..300).contains(&status) {
                return Err(Error::Protocol {
                    endpoint: self.endpoint.clone(),
                    status,
                });
            }
            let body = response
                .body_mut()
                .read_to_string()
                .map_err(|e| self.classify(e))?;
            let wire: WireResponse = serde_json::from_str(&body).map_err(|e| Error::Parse {
                message: format!("bad response body from {}: {e}", self.endpoint),
                raw: body,
            })?;
            Ok(wire.text)
        }

        /// The payload is serialized once and resent bit-identically on
        /// transport-error retries.
        pub(super) fn send(
            &self,
            model: &str,
            prompt: &str,
            temperature: f64,
            seed: u64,
        ) -> Result<GenerationResponse> {
            let payload = serde_json::to_string(&WireRequest {
                model,
                prompt,
                temperature,
                seed,
            })
            .map_err(|e| Error::Json {
                context: format!("wire request for {model}"),
                source: e,
            })?;
            let started = Instant::now();
            let mut attempt = 0;
            loop {
                match self.send_once(&payload) {
                    Ok(text) => {
                        let latency_ms = started.elapsed().as_secs_f64() * 1e3;
                        return Ok(GenerationResponse::success(&text, latency_ms));
                    }
                    Err(Error::Transport { .. }) if attempt < MAX_TRANSPORT_RETRIES => {
                        attempt += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
}
