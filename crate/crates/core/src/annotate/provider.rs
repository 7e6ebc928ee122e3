use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Something that answers a prompt with free text.
pub trait Provider: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, prompt: &str) -> std::result::Result<String, String>;
}

/// Chat-completion endpoint settings. The credential itself is only ever
/// read from the environment at request time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    /// Base URL; `/chat/completions` is appended.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub credential_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

fn default_timeout() -> u64 {
    60
}
fn default_retries() -> usize {
    3
}
fn default_concurrency() -> usize {
    4
}

impl ProviderConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ProviderConfig = toml::from_str(text)?;
        if c.endpoint.is_empty() || c.model.is_empty() {
            return Err(Error::Config("provider endpoint and model are required".into()));
        }
        Ok(c)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: Option<String>,
}

pub fn chat_request_body(model: &str, prompt: &str, temperature: f64) -> serde_json::Value {
    serde_json::to_value(ChatRequest {
        model,
        messages: vec![ChatMessage { role: "user", content: prompt }],
        temperature,
    })
    .expect("plain struct")
}

pub fn parse_chat_response(body: &str) -> std::result::Result<String, String> {
    let parsed: ChatResponse = serde_json::from_str(body).map_err(|e| format!("bad response body: {e}"))?;
    parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| "response carries no message content".to_string())
}

pub struct HttpProvider {
    config: ProviderConfig,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Result<Self> {
        if std::env::var(&config.credential_env).is_err() {
            return Err(Error::Config(format!(
                "credential variable {} is not set",
                config.credential_env
            )));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, agent })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }
}

impl Provider for HttpProvider {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, prompt: &str) -> std::result::Result<String, String> {
        let key = std::env::var(&self.config.credential_env)
            .map_err(|_| format!("{} is not set", self.config.credential_env))?;
        let url = format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'));
        let body = chat_request_body(&self.config.model, prompt, self.config.temperature);
        let mut resp = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {key}"))
            .send_json(&body)
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()));
        }
        parse_chat_response(&text)
    }
}

/// Scripted stand-in for a provider: replies from a fixed sequence (the
/// last entry repeats), counting calls.
pub struct MockProvider {
    model: String,
    script: Mutex<Vec<std::result::Result<String, String>>>,
    calls: AtomicUsize,
}

impl MockProvider {
    pub fn echo(model: &str, reply: &str) -> Self {
        Self::scripted(model, vec![Ok(reply.to_string())])
    }

    pub fn scripted(model: &str, script: Vec<std::result::Result<String, String>>) -> Self {
        assert!(!script.is_empty());
        let mut script = script;
        script.reverse();
        Self {
            model: model.to_string(),
            script: Mutex::new(script),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Provider for MockProvider {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, _prompt: &str) -> std::result::Result<String, String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut s = self.script.lock().expect("poisoned");
        if s.len() > 1 {
            s.pop().expect("nonempty")
        } else {
            s[0].clone()
        }
    }
}
