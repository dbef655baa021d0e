use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, GenerationParams};
use crate::error::{BackendError, Error, Result};
use crate::model::{Completion, FimTask, TokenLogProb};
use crate::postprocess::postprocess;

pub const CURSOR_MARKER: &str = "<CURSOR>";

pub const SYSTEM_PROMPT: &str = "You are a code completion engine. The user sends source code \
with a <CURSOR> marker where code is missing. Return only the missing code that belongs at \
the cursor, with no explanation and no surrounding code.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    /// Server root, e.g. `http://10.0.0.5:8000`; `/v1/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

fn default_timeout() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// The infilling prompt: fixed system instruction plus the code with a cursor marker.
pub fn build_messages(task: &FimTask) -> Vec<ChatMessage> {
    vec![
        ChatMessage {
            role: "system".into(),
            content: SYSTEM_PROMPT.into(),
        },
        ChatMessage {
            role: "user".into(),
            content: format!(
                "Language: {}\n\n{}{CURSOR_MARKER}{}",
                task.language, task.prefix, task.suffix
            ),
        },
    ]
}

/// OpenAI-compatible chat-completions client (Ollama, vLLM and similar).
#[derive(Debug)]
pub struct HttpBackend {
    config: HttpBackendConfig,
    endpoint: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Option<Vec<WireToken>>,
}

#[derive(Deserialize)]
struct WireToken {
    token: String,
    logprob: f64,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self> {
        if !(config.timeout_secs > 0.0) {
            return Err(Error::Config("backend timeout_secs must be > 0".into()));
        }
        let token = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::Config(format!("environment variable `{var}` is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .pool_max_idle_per_host(16)
            .build()
            .map_err(|e| Error::Config(format!("building HTTP client: {e}")))?;
        let endpoint = format!("{}/v1/chat/completions", config.base_url.trim_end_matches('/'));
        Ok(HttpBackend {
            config,
            endpoint,
            token,
            client,
        })
    }

    fn fail(&self, message: String, retry_safe: bool) -> Error {
        Error::Backend(BackendError {
            backend: self.config.model.clone(),
            message,
            retry_safe,
        })
    }
}

impl Backend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn generate(&self, task: &FimTask, params: &GenerationParams) -> Result<Completion> {
        let mut body = json!({
            "model": self.config.model,
            "messages": build_messages(task),
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        if params.want_logprobs {
            body["logprobs"] = json!(true);
        }
        let mut request = self
            .client
            .post(&self.endpoint)
            .timeout(Duration::from_secs_f64(params.request_timeout))
            .json(&body);
        if let Some(token) = &self.token {
            request = request.bearer_auth(token);
        }

        let started = Instant::now();
        let response = request.send().map_err(|e| {
            let retry = e.is_timeout() || e.is_connect() || e.is_request();
            self.fail(format!("request failed: {e}"), retry)
        })?;
        let status = response.status();
        if !status.is_success() {
            let retry = status.is_server_error() || status.as_u16() == 429;
            return Err(self.fail(format!("HTTP {status}"), retry));
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| self.fail(format!("malformed response: {e}"), false))?;
        let latency = started.elapsed().as_secs_f64();

        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| self.fail("response has no choices".into(), false))?;
        let raw_text = choice.message.content.unwrap_or_default();
        let mut tokens: Vec<TokenLogProb> = choice
            .logprobs
            .and_then(|l| l.content)
            .unwrap_or_default()
            .into_iter()
            .map(|t| TokenLogProb::new(t.token, t.logprob.min(0.0)))
            .collect();
        if params.want_logprobs && tokens.is_empty() && !raw_text.is_empty() {
            tracing::warn!(
                model = %self.config.model,
                "backend returned no logprobs; confidence will be 0 (escalate)"
            );
        }
        tokens.truncate(params.max_tokens);

        Ok(Completion {
            text: postprocess(&raw_text, task),
            raw_text,
            tokens,
            model_id: self.config.model.clone(),
            latency,
        })
    }
}
