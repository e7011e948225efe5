//! Deterministic backends: keyed replay of stored transcripts, an in-order
//! script for authoring, and a recorder that turns any run into transcripts.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError, Stage, Usage};
use crate::agents::template_digests;
use crate::util::count_tokens;

const TEMPLATES_FILE: &str = "templates.json";
const ENTRIES_DIR: &str = "entries";

/// One stored completion, addressed by [`ChatRequest::replay_key`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub key: String,
    pub stage: Stage,
    pub text: String,
    pub usage: Usage,
}

/// Replays stored transcripts keyed by stage and request digest.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    entries: HashMap<String, ChatResponse>,
}

impl ScriptedBackend {
    pub fn new(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|e| (e.key, ChatResponse { text: e.text, usage: e.usage }))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Loads a transcript directory. Fails with `StaleTranscripts` when the
    /// directory was recorded against different prompt templates.
    pub fn load(dir: &Path) -> Result<Self, LlmError> {
        let io = |e: std::io::Error| LlmError::Io(format!("{}: {e}", dir.display()));
        let recorded: BTreeMap<String, String> = serde_json::from_slice(
            &fs::read(dir.join(TEMPLATES_FILE)).map_err(io)?,
        )
        .map_err(|e| LlmError::Io(format!("{TEMPLATES_FILE}: {e}")))?;
        let current = template_digests();
        if recorded != current {
            let changed: Vec<&str> = current
                .iter()
                .filter(|(k, v)| recorded.get(*k) != Some(*v))
                .map(|(k, _)| k.as_str())
                .collect();
            return Err(LlmError::StaleTranscripts(format!("templates changed: {}", changed.join(", "))));
        }
        let mut files: Vec<_> = fs::read_dir(dir.join(ENTRIES_DIR))
            .map_err(io)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut entries = Vec::with_capacity(files.len());
        for f in files {
            let bytes = fs::read(&f).map_err(io)?;
            let e: TranscriptEntry = serde_json::from_slice(&bytes)
                .map_err(|e| LlmError::Io(format!("{}: {e}", f.display())))?;
            entries.push(e);
        }
        Ok(Self::new(entries))
    }

    /// Writes entries plus the current template digests.
    pub fn write(dir: &Path, entries: &[TranscriptEntry]) -> Result<(), LlmError> {
        let io = |e: std::io::Error| LlmError::Io(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir.join(ENTRIES_DIR)).map_err(io)?;
        let templates = serde_json::to_vec_pretty(&template_digests()).expect("string map serializes");
        fs::write(dir.join(TEMPLATES_FILE), templates).map_err(io)?;
        for e in entries {
            let hash = e.key.split(':').nth(1).unwrap_or(&e.key);
            let name = format!("{}-{}.json", e.stage, &hash[..hash.len().min(16)]);
            let body = serde_json::to_vec_pretty(e).expect("entry serializes");
            fs::write(dir.join(ENTRIES_DIR).join(name), body).map_err(io)?;
        }
        Ok(())
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, req: &ChatRequest, stage: Stage) -> Result<ChatResponse, LlmError> {
        let key = req.replay_key(stage);
        self.entries
            .get(&key)
            .cloned()
            .ok_or(LlmError::ReplayMiss { key })
    }
}

/// A scripted response consumed in order; usage is estimated with the
/// pinned tokenizer when not given.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

/// Answers each stage from its own queue, ignoring request content. Used to
/// author transcripts against a fixture site.
#[derive(Debug, Default)]
pub struct SequenceBackend {
    queues: Mutex<BTreeMap<Stage, VecDeque<ScriptEntry>>>,
}

impl SequenceBackend {
    pub fn new(script: BTreeMap<Stage, Vec<ScriptEntry>>) -> Self {
        Self {
            queues: Mutex::new(script.into_iter().map(|(k, v)| (k, v.into())).collect()),
        }
    }

    pub fn remaining(&self, stage: Stage) -> usize {
        self.queues
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(&stage)
            .map_or(0, VecDeque::len)
    }
}

impl ChatBackend for SequenceBackend {
    fn complete(&self, req: &ChatRequest, stage: Stage) -> Result<ChatResponse, LlmError> {
        let next = self
            .queues
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get_mut(&stage)
            .and_then(VecDeque::pop_front);
        let entry = next.ok_or_else(|| LlmError::ReplayMiss { key: req.replay_key(stage) })?;
        let usage = entry.usage.unwrap_or_else(|| Usage {
            prompt_tokens: count_tokens(&req.all_text()),
            completion_tokens: count_tokens(&entry.text),
            images: req.image_count(),
        });
        Ok(ChatResponse { text: entry.text, usage })
    }
}

/// Wraps a backend and keeps every successful exchange as a transcript entry.
pub struct RecordingBackend<B> {
    inner: B,
    recorded: Mutex<Vec<TranscriptEntry>>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, recorded: Mutex::new(Vec::new()) }
    }

    /// Recorded entries, first occurrence per key, in call order.
    pub fn entries(&self) -> Vec<TranscriptEntry> {
        let rec = self.recorded.lock().unwrap_or_else(|e| e.into_inner());
        let mut seen = std::collections::HashSet::new();
        rec.iter().filter(|e| seen.insert(e.key.clone())).cloned().collect()
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, req: &ChatRequest, stage: Stage) -> Result<ChatResponse, LlmError> {
        let resp = self.inner.complete(req, stage)?;
        self.recorded
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(TranscriptEntry {
                key: req.replay_key(stage),
                stage,
                text: resp.text.clone(),
                usage: resp.usage,
            });
        Ok(resp)
    }
}
