//! Language-model backends and call recording.
//!
//! Every call from the guidance parser, the navigation prompt and the feedback
//! evaluator goes through an [`LlmClient`], which forwards to a shared
//! [`LlmBackend`] and appends one [`TranscriptEntry`] per call.

mod fault;
mod http;
mod mock;
mod transcript;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fault::{FaultConfig, FaultInjectingBackend};
pub use http::{ChatCompletionRequest, ChatCompletionResponse, ChatMessage, HttpBackend};
pub use mock::{MockBackend, RuleTable, MOCK_RULES_VERSION, UNRECOGNIZED};
pub use transcript::{Transcript, TranscriptEntry, TRANSCRIPT_SCHEMA};

/// Section markers the prompts carry and the mock rule table keys on.
pub mod markers {
    pub const GUIDANCE: &str = "[SALM:GUIDANCE]";
    pub const LNM_CONTRACT: &str = "[SALM:LNM-CONTRACT]";
    pub const LFM_SCORE: &str = "[SALM:LFM-SCORE]";
    pub const LFM_FINAL: &str = "[SALM:LFM-FINAL]";
    pub const UTTERANCE_OPEN: &str = "<<<UTTERANCE>>>";
    pub const CURRENT_OPEN: &str = "<<<CURRENT>>>";
    pub const CANDIDATE_OPEN: &str = "<<<CANDIDATE>>>";
    pub const SCORES_OPEN: &str = "<<<SCORES>>>";
    pub const CLOSE: &str = "<<<END>>>";

    /// Text between `open` and the next [`CLOSE`], last occurrence wins.
    pub fn last_block<'a>(text: &'a str, open: &str) -> Option<&'a str> {
        let start = text.rfind(open)? + open.len();
        let rest = &text[start..];
        let end = rest.find(CLOSE)?;
        Some(&rest[..end])
    }
}

#[derive(Debug, Clone, Error, PartialEq, Serialize, Deserialize)]
pub enum LlmError {
    #[error("backend timed out after {after_ms} ms")]
    Timeout { after_ms: u64 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Caller {
    Guidance,
    Lnm,
    Lfm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self { temperature: 0.0, max_tokens: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// Transport-level retries spent on this call.
    pub retries: u32,
    pub latency_ms: u64,
}

pub trait LlmBackend: Send + Sync {
    /// Short identity string recorded in run manifests.
    fn identity(&self) -> String;

    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<Completion, LlmError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Mock,
}

/// Backend selection. Network fields are ignored by the mock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub rules_path: Option<std::path::PathBuf>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub temperature: f64,
    /// Optional fault injection wrapped around the backend.
    #[serde(default)]
    pub faults: Option<FaultConfig>,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_timeout() -> f64 {
    30.0
}

fn default_retries() -> u32 {
    2
}

impl BackendConfig {
    pub fn mock() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            model: None,
            api_key_env: default_key_env(),
            rules_path: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            temperature: 0.0,
            faults: None,
        }
    }

    pub fn http(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self { kind: BackendKind::Http, endpoint: Some(endpoint.into()), model: Some(model.into()), ..Self::mock() }
    }

    pub fn with_faults(mut self, faults: FaultConfig) -> Self {
        self.faults = Some(faults);
        self
    }

    /// Instantiates the backend; `episode_seed` keys fault injection so each episode is reproducible.
    pub fn build(&self, episode_seed: u64) -> Result<Arc<dyn LlmBackend>, LlmError> {
        if !(self.timeout_secs > 0.0) {
            return Err(LlmError::Config(format!("timeout {} must be > 0", self.timeout_secs)));
        }
        let base: Arc<dyn LlmBackend> = match self.kind {
            BackendKind::Mock => {
                let rules = match &self.rules_path {
                    Some(p) => RuleTable::load(p)?,
                    None => RuleTable::builtin(),
                };
                Arc::new(MockBackend::new(rules))
            }
            BackendKind::Http => Arc::new(HttpBackend::from_config(self)?),
        };
        Ok(match &self.faults {
            Some(f) => Arc::new(FaultInjectingBackend::new(base, f.clone(), episode_seed)),
            None => base,
        })
    }

    pub fn params(&self) -> CompletionParams {
        CompletionParams { temperature: self.temperature, max_tokens: None }
    }
}

/// Recording handle shared by the planners of one episode.
#[derive(Clone)]
pub struct LlmClient {
    backend: Arc<dyn LlmBackend>,
    params: CompletionParams,
    transcript: Arc<Mutex<Transcript>>,
    step: Arc<AtomicU64>,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn LlmBackend>, params: CompletionParams) -> Self {
        Self {
            backend,
            params,
            transcript: Arc::new(Mutex::new(Transcript::default())),
            step: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn identity(&self) -> String {
        self.backend.identity()
    }

    pub fn set_step(&self, step: u64) {
        self.step.store(step, Ordering::SeqCst);
    }

    /// Sends `prompt` and records the exchange, successful or not.
    pub fn call(&self, caller: Caller, prompt: &str) -> Result<String, LlmError> {
        let outcome = if prompt.is_empty() {
            Err(LlmError::Config("empty prompt".into()))
        } else {
            self.backend.complete(prompt, &self.params)
        };
        let step = self.step.load(Ordering::SeqCst);
        let entry = match &outcome {
            Ok(c) => TranscriptEntry {
                step,
                caller,
                prompt: prompt.to_string(),
                reply: Some(c.text.clone()),
                error: None,
                latency_ms: c.latency_ms,
                retries: c.retries,
            },
            Err(e) => TranscriptEntry {
                step,
                caller,
                prompt: prompt.to_string(),
                reply: None,
                error: Some(e.to_string()),
                latency_ms: 0,
                retries: 0,
            },
        };
        self.transcript.lock().expect("transcript lock").record(entry);
        outcome.map(|c| c.text)
    }

    pub fn transcript(&self) -> Transcript {
        self.transcript.lock().expect("transcript lock").clone()
    }

    pub fn call_count(&self) -> usize {
        self.transcript.lock().expect("transcript lock").len()
    }
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient").field("backend", &self.backend.identity()).finish()
    }
}

/// Backend replying from a fixed script, then repeating the last reply. Handy in tests.
pub struct ScriptedBackend {
    replies: Mutex<std::collections::VecDeque<Result<String, LlmError>>>,
    last: Mutex<Option<Result<String, LlmError>>>,
}

impl ScriptedBackend {
    pub fn new(replies: impl IntoIterator<Item = Result<String, LlmError>>) -> Self {
        Self { replies: Mutex::new(replies.into_iter().collect()), last: Mutex::new(None) }
    }

    pub fn always(reply: &str) -> Self {
        Self::new([Ok(reply.to_string())])
    }
}

impl LlmBackend for ScriptedBackend {
    fn identity(&self) -> String {
        "scripted".into()
    }

    fn complete(&self, _prompt: &str, _params: &CompletionParams) -> Result<Completion, LlmError> {
        let next = self.replies.lock().unwrap().pop_front();
        let reply = match next {
            Some(r) => {
                *self.last.lock().unwrap() = Some(r.clone());
                r
            }
            None => self.last.lock().unwrap().clone().unwrap_or_else(|| Ok(UNRECOGNIZED.to_string())),
        };
        reply.map(|text| Completion { text, retries: 0, latency_ms: 0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_call_is_recorded_in_order() {
        let client = LlmClient::new(
            Arc::new(ScriptedBackend::new([Ok("a".into()), Err(LlmError::Timeout { after_ms: 5 })])),
            CompletionParams::default(),
        );
        client.set_step(3);
        assert_eq!(client.call(Caller::Lnm, "p1").unwrap(), "a");
        assert!(client.call(Caller::Lfm, "p2").is_err());
        let t = client.transcript();
        assert_eq!(t.len(), 2);
        assert_eq!(t.entries()[0].caller, Caller::Lnm);
        assert_eq!(t.entries()[0].step, 3);
        assert!(t.entries()[1].error.as_deref().unwrap().contains("timed out"));
    }

    #[test]
    fn empty_prompt_is_rejected_but_recorded() {
        let client = LlmClient::new(Arc::new(ScriptedBackend::always("x")), CompletionParams::default());
        assert!(matches!(client.call(Caller::Lnm, ""), Err(LlmError::Config(_))));
        assert_eq!(client.call_count(), 1);
    }

    #[test]
    fn config_rejects_non_positive_timeout() {
        let mut c = BackendConfig::mock();
        c.timeout_secs = 0.0;
        assert!(c.build(0).is_err());
    }
}
