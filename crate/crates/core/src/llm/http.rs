//! Live backend speaking the chat-completions wire format.

use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError, Stage, Usage, UserPart};
use crate::util::Semaphore;

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub max_concurrent: usize,
    pub timeout: Duration,
    /// Sleep before each retry; its length is the retry count.
    pub retry_delays: Vec<Duration>,
    pub max_tokens: Option<u32>,
    pub temperature: Option<f32>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            api_key: None,
            max_concurrent: 16,
            timeout: Duration::from_secs(120),
            retry_delays: vec![Duration::from_secs(1), Duration::from_secs(4), Duration::from_secs(16)],
            max_tokens: None,
            temperature: None,
        }
    }
}

pub struct HttpBackend {
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
    permits: Semaphore,
}

enum Failure {
    Transient(String),
    Fatal(LlmError),
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| LlmError::BackendUnavailable(e.to_string()))?;
        let permits = Semaphore::new(cfg.max_concurrent.max(1));
        Ok(Self { cfg, client, permits })
    }

    fn body(&self, req: &ChatRequest) -> Value {
        let content: Vec<Value> = req
            .user_parts
            .iter()
            .map(|p| match p {
                UserPart::Text(t) => json!({"type": "text", "text": t}),
                UserPart::Image(img) => {
                    let b64 = base64::engine::general_purpose::STANDARD.encode(img.to_png());
                    json!({"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{b64}")}})
                }
            })
            .collect();
        let mut body = json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": content},
            ],
        });
        if let Some(m) = self.cfg.max_tokens {
            body["max_tokens"] = json!(m);
        }
        if let Some(t) = self.cfg.temperature {
            body["temperature"] = json!(t);
        }
        body
    }

    fn send_once(&self, body: &Value) -> Result<(String, Usage), Failure> {
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let mut rb = self.client.post(url).json(body);
        if let Some(key) = &self.cfg.api_key {
            rb = rb.bearer_auth(key);
        }
        let resp = rb.send().map_err(|e| Failure::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Failure::Transient(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Failure::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let lowered = text.to_ascii_lowercase();
            if status.as_u16() == 413
                || lowered.contains("context_length_exceeded")
                || lowered.contains("maximum context length")
            {
                return Err(Failure::Fatal(LlmError::ContextTooLarge));
            }
            return Err(Failure::Fatal(LlmError::Rejected(format!("HTTP {status}: {text}"))));
        }
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::Fatal(LlmError::Rejected(format!("bad response body: {e}"))))?;
        let content = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| Failure::Fatal(LlmError::Rejected("response has no message content".into())))?
            .to_string();
        let usage = Usage {
            prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
            images: 0,
        };
        Ok((content, usage))
    }
}

impl ChatBackend for HttpBackend {
    /// Retries transport failures, HTTP 429 and 5xx after each configured
    /// delay; usage is taken from the one successful response only.
    fn complete(&self, req: &ChatRequest, _stage: Stage) -> Result<ChatResponse, LlmError> {
        let _permit = self.permits.acquire();
        let body = self.body(req);
        let mut attempt = 0;
        loop {
            match self.send_once(&body) {
                Ok((text, mut usage)) => {
                    usage.images = req.image_count();
                    return Ok(ChatResponse { text, usage });
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(msg)) => {
                    let Some(delay) = self.cfg.retry_delays.get(attempt) else {
                        return Err(LlmError::BackendUnavailable(format!(
                            "{msg} (after {} attempts)",
                            attempt + 1
                        )));
                    };
                    tracing::warn!(attempt, %msg, "chat request failed, retrying");
                    std::thread::sleep(*delay);
                    attempt += 1;
                }
            }
        }
    }
}
