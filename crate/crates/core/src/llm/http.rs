//! OpenAI-compatible chat-completions client.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{BackendConfig, Completion, CompletionParams, LlmBackend, LlmError};

const BODY_EXCERPT: usize = 512;
const BACKOFF_BASE_MS: u64 = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatCompletionRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatCompletionResponse {
    pub choices: Vec<Choice>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Choice {
    pub message: ChoiceMessage,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChoiceMessage {
    #[serde(default)]
    pub content: Option<String>,
}

impl ChatCompletionResponse {
    pub fn first_content(self) -> Result<String, LlmError> {
        self.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Protocol("response has no choices[0].message.content".into()))
    }
}

pub struct HttpBackend {
    url: String,
    model: String,
    api_key: Option<String>,
    timeout: Duration,
    max_retries: u32,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, LlmError> {
        let endpoint = cfg.endpoint.as_deref().ok_or_else(|| LlmError::Config("http backend needs an endpoint".into()))?;
        let model = cfg.model.clone().ok_or_else(|| LlmError::Config("http backend needs a model".into()))?;
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(Self::new(endpoint, model, api_key, Duration::from_secs_f64(cfg.timeout_secs), cfg.max_retries))
    }

    pub fn new(endpoint: &str, model: String, api_key: Option<String>, timeout: Duration, max_retries: u32) -> Self {
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") { base.to_string() } else { format!("{base}/chat/completions") };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { url, model, api_key, timeout, max_retries, agent }
    }

    pub fn request_body(&self, prompt: &str, params: &CompletionParams) -> ChatCompletionRequest {
        ChatCompletionRequest {
            model: self.model.clone(),
            messages: vec![ChatMessage { role: "user".into(), content: prompt.to_string() }],
            temperature: params.temperature,
            max_tokens: params.max_tokens,
        }
    }

    fn attempt(&self, body: &ChatCompletionRequest) -> Result<String, Attempt> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {k}"));
        }
        let mut resp = req.send_json(body).map_err(|e| self.classify(e))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| self.classify(e))?;
        if status >= 400 {
            let excerpt: String = text.chars().take(BODY_EXCERPT).collect();
            let err = LlmError::Status { status, body: excerpt };
            return Err(if status == 429 || status >= 500 { Attempt::Retry(err) } else { Attempt::Fatal(err) });
        }
        let parsed: ChatCompletionResponse =
            serde_json::from_str(&text).map_err(|e| Attempt::Fatal(LlmError::Protocol(e.to_string())))?;
        parsed.first_content().map_err(Attempt::Fatal)
    }

    fn classify(&self, e: ureq::Error) -> Attempt {
        match e {
            ureq::Error::Timeout(_) => Attempt::Retry(LlmError::Timeout { after_ms: self.timeout.as_millis() as u64 }),
            other => Attempt::Retry(LlmError::Transport(other.to_string())),
        }
    }
}

enum Attempt {
    Retry(LlmError),
    Fatal(LlmError),
}

impl LlmBackend for HttpBackend {
    fn identity(&self) -> String {
        format!("http:{}@{}", self.model, self.url)
    }

    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<Completion, LlmError> {
        let body = self.request_body(prompt, params);
        let start = Instant::now();
        let mut retries = 0;
        loop {
            match self.attempt(&body) {
                Ok(text) => {
                    return Ok(Completion { text, retries, latency_ms: start.elapsed().as_millis() as u64 });
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    if retries >= self.max_retries {
                        return Err(e);
                    }
                    tracing::debug!(retries, error = %e, "retrying chat completion");
                    std::thread::sleep(Duration::from_millis(BACKOFF_BASE_MS << retries));
                    retries += 1;
                }
            }
        }
    }
}
