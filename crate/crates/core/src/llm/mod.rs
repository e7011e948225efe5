//! Chat-completion interface shared by every agent role.

mod http;
mod scripted;

pub use http::{HttpBackend, HttpConfig};
pub use scripted::{
    RecordingBackend, ScriptEntry, ScriptedBackend, SequenceBackend, TranscriptEntry,
};

use std::collections::BTreeMap;
use std::fmt;
use std::ops::AddAssign;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::page::Screenshot;
use crate::util::collapse_ws;

/// Pipeline stage a call is billed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Proposal,
    Refinement,
    Summarization,
    Verification,
    Reasoning,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Proposal,
        Stage::Refinement,
        Stage::Summarization,
        Stage::Verification,
        Stage::Reasoning,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Proposal => "proposal",
            Stage::Refinement => "refinement",
            Stage::Summarization => "summarization",
            Stage::Verification => "verification",
            Stage::Reasoning => "reasoning",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UserPart {
    Text(String),
    Image(Screenshot),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatRequest {
    pub system: String,
    pub user_parts: Vec<UserPart>,
}

impl ChatRequest {
    pub fn new(system: impl Into<String>) -> Self {
        Self { system: system.into(), user_parts: Vec::new() }
    }

    pub fn text(mut self, t: impl Into<String>) -> Self {
        self.user_parts.push(UserPart::Text(t.into()));
        self
    }

    pub fn image(mut self, s: Screenshot) -> Self {
        self.user_parts.push(UserPart::Image(s));
        self
    }

    pub fn image_count(&self) -> u64 {
        self.user_parts
            .iter()
            .filter(|p| matches!(p, UserPart::Image(_)))
            .count() as u64
    }

    /// Concatenated system and user text, for token estimates.
    pub fn all_text(&self) -> String {
        let mut s = self.system.clone();
        for p in &self.user_parts {
            if let UserPart::Text(t) = p {
                s.push('\n');
                s.push_str(t);
            }
        }
        s
    }

    /// Replay key: stage plus a digest of whitespace-normalized system and
    /// user text and of image pixel digests.
    pub fn replay_key(&self, stage: Stage) -> String {
        let mut h = Sha256::new();
        h.update(b"system\0");
        h.update(collapse_ws(&self.system).as_bytes());
        for p in &self.user_parts {
            match p {
                UserPart::Text(t) => {
                    h.update(b"\0text\0");
                    h.update(collapse_ws(t).as_bytes());
                }
                UserPart::Image(img) => {
                    h.update(b"\0image\0");
                    h.update(img.digest().as_bytes());
                }
            }
        }
        format!("{}:{}", stage.as_str(), hex::encode(h.finalize()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub images: u64,
}

impl Usage {
    pub fn text_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl AddAssign for Usage {
    fn add_assign(&mut self, o: Usage) {
        self.prompt_tokens += o.prompt_tokens;
        self.completion_tokens += o.completion_tokens;
        self.images += o.images;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
}

/// Per-stage tally.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageUsage {
    pub calls: u64,
    #[serde(flatten)]
    pub usage: Usage,
}

impl AddAssign for StageUsage {
    fn add_assign(&mut self, o: StageUsage) {
        self.calls += o.calls;
        self.usage += o.usage;
    }
}

pub type UsageByStage = BTreeMap<Stage, StageUsage>;

pub fn merge_usage(into: &mut UsageByStage, from: &UsageByStage) {
    for (stage, u) in from {
        *into.entry(*stage).or_default() += *u;
    }
}

/// Thread-safe per-stage usage tallies. Tallies only grow.
#[derive(Debug, Default)]
pub struct UsageAccumulator {
    inner: Mutex<UsageByStage>,
}

impl UsageAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, stage: Stage, usage: Usage) {
        let mut m = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        *m.entry(stage).or_default() += StageUsage { calls: 1, usage };
    }

    pub fn snapshot(&self) -> UsageByStage {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("request exceeds the model context window")]
    ContextTooLarge,
    #[error("no scripted response for {key}")]
    ReplayMiss { key: String },
    #[error("transcripts were recorded against different prompt templates: {0}")]
    StaleTranscripts(String),
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("invalid request: {0}")]
    InvalidRequest(&'static str),
    #[error("transcript i/o: {0}")]
    Io(String),
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest, stage: Stage) -> Result<ChatResponse, LlmError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn complete(&self, req: &ChatRequest, stage: Stage) -> Result<ChatResponse, LlmError> {
        (**self).complete(req, stage)
    }
}

/// A backend plus the accumulator its successful calls are billed to.
#[derive(Clone, Copy)]
pub struct MeteredClient<'a> {
    pub backend: &'a dyn ChatBackend,
    pub usage: &'a UsageAccumulator,
}

impl<'a> MeteredClient<'a> {
    pub fn new(backend: &'a dyn ChatBackend, usage: &'a UsageAccumulator) -> Self {
        Self { backend, usage }
    }

    pub fn complete(&self, req: &ChatRequest, stage: Stage) -> Result<ChatResponse, LlmError> {
        if req.user_parts.is_empty() {
            return Err(LlmError::InvalidRequest("request has no user parts"));
        }
        let resp = self.backend.complete(req, stage)?;
        self.usage.record(stage, resp.usage);
        Ok(resp)
    }
}
