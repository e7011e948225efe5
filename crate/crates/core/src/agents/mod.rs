//! Prompt-based roles: proposer, refiner, summarizer, verifier and the
//! post-hoc reasoning generator.

pub mod prompts;

pub use prompts::template_digests;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::payload::last_fenced_block;
use crate::action::{parse_agent_payload, render_action, Action, AgentPayload, ElementIndex, PayloadError};
use crate::llm::{ChatRequest, LlmError, MeteredClient, Stage};
use crate::page::{serialize_a11y, PageObservation, Screenshot};
use prompts::fill;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Payload(#[from] PayloadError),
    #[error("proposer stopped on the first page")]
    PolicyHalt,
    #[error("action repeated on an unchanged page")]
    RepeatActionRejected,
    #[error("grounded action refers to element {0}, which was not shown to the model")]
    Ungrounded(ElementIndex),
    #[error("verifier response has no Status line")]
    MalformedVerdict,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub action_nl: String,
    pub action: Action,
    /// Digest of the page the action was issued on.
    pub page_digest: String,
}

/// Task under construction, owned by one worker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskState {
    pub current_task: String,
    pub history: Vec<HistoryEntry>,
}

impl TaskState {
    pub fn new(task: impl Into<String>) -> Self {
        Self { current_task: task.into(), history: Vec::new() }
    }

    pub fn push(&mut self, action_nl: impl Into<String>, action: Action, page_digest: impl Into<String>) {
        self.history.push(HistoryEntry {
            action_nl: action_nl.into(),
            action,
            page_digest: page_digest.into(),
        });
    }

    /// Takes over the payload's task and appends its action.
    pub fn apply(&mut self, p: &AgentPayload, page_digest: impl Into<String>) {
        self.current_task = p.task.clone();
        self.push(p.action_nl.clone(), p.grounded.clone(), page_digest);
    }

    pub fn nl_actions(&self) -> Vec<String> {
        self.history.iter().map(|h| h.action_nl.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictStatus {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub thoughts: String,
    pub status: VerdictStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub task: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Accessibility-tree lines shown to the proposer and refiner.
    pub a11y_limit: usize,
    /// Step screenshots sent to summarizer and verifier, newest kept.
    pub max_step_screenshots: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self { a11y_limit: 400, max_step_screenshots: 8 }
    }
}

/// Keeps the newest `max` step screenshots and appends the final page.
pub fn cap_screenshots(steps: &[Screenshot], final_page: &Screenshot, max: usize) -> Vec<Screenshot> {
    let skip = steps.len().saturating_sub(max);
    steps[skip..].iter().cloned().chain([final_page.clone()]).collect()
}

fn numbered(items: &[String]) -> String {
    if items.is_empty() {
        return "None".into();
    }
    items
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

pub struct Agents<'a> {
    pub client: MeteredClient<'a>,
    pub config: AgentConfig,
}

impl<'a> Agents<'a> {
    pub fn new(client: MeteredClient<'a>, config: AgentConfig) -> Self {
        Self { client, config }
    }

    fn agent_request(&self, system: String, obs: &PageObservation, url: &str) -> ChatRequest {
        let tree = serialize_a11y(&obs.a11y, self.config.a11y_limit);
        let user = fill(prompts::AGENT_USER, &[("INIT_URL", url), ("A11Y_TREE", &format!("\n{tree}"))]);
        ChatRequest::new(system).text(user).image(obs.som_screenshot.clone())
    }

    fn check_grounded(&self, p: &AgentPayload, obs: &PageObservation) -> Result<(), AgentError> {
        match p.grounded.element() {
            Some(idx) if !obs.a11y.elements.iter().take(self.config.a11y_limit).any(|e| e.index == idx) => {
                Err(AgentError::Ungrounded(idx))
            }
            _ => Ok(()),
        }
    }

    /// Task proposal plus first action on the landing page. A `stop` here
    /// is reported as `PolicyHalt`.
    pub fn propose(&self, obs: &PageObservation, url: &str) -> Result<AgentPayload, AgentError> {
        let req = self.agent_request(fill(prompts::PROPOSER_SYSTEM, &[]), obs, url);
        let resp = self.client.complete(&req, Stage::Proposal)?;
        let p = parse_agent_payload(&resp.text)?;
        if p.grounded.is_stop() {
            return Err(AgentError::PolicyHalt);
        }
        self.check_grounded(&p, obs)?;
        Ok(p)
    }

    /// Next action and updated task. A returned `stop` ends the loop; the
    /// caller applies the payload to the state after executing it.
    pub fn refine(&self, state: &TaskState, obs: &PageObservation, url: &str) -> Result<AgentPayload, AgentError> {
        let last = state.history.last().ok_or(AgentError::EmptyInput("refine needs a history"))?;
        let prev = format!("\n{}\n", numbered(&state.nl_actions()));
        let system = fill(
            prompts::REFINER_SYSTEM,
            &[("OVERALL_TASK", &state.current_task), ("PREV_ACTION_LIST", &prev)],
        );
        let req = self.agent_request(system, obs, url);
        let resp = self.client.complete(&req, Stage::Refinement)?;
        let p = parse_agent_payload(&resp.text)?;
        if p.grounded.is_stop() {
            return Ok(p);
        }
        self.check_grounded(&p, obs)?;
        if !p.grounded.is_scroll() && p.grounded == last.action && obs.digest == last.page_digest {
            return Err(AgentError::RepeatActionRejected);
        }
        Ok(p)
    }

    pub fn summarize(&self, actions: &[String], screenshots: &[Screenshot], url: &str) -> Result<Summary, AgentError> {
        if actions.is_empty() {
            return Err(AgentError::EmptyInput("no actions to summarize"));
        }
        let list = format!("\n{}\n", numbered(actions));
        let system = fill(prompts::SUMMARIZER_SYSTEM, &[("WEBSITE_URL", url), ("ACTION_LIST", &list)]);
        let mut req = ChatRequest::new(system);
        for s in screenshots {
            req = req.image(s.clone());
        }
        if screenshots.is_empty() {
            req = req.text("No screenshots were captured.");
        }
        let resp = self.client.complete(&req, Stage::Summarization)?;
        parse_summary(&resp.text)
    }

    pub fn verify(
        &self,
        task: &str,
        history: &[String],
        screenshots: &[Screenshot],
        final_markdown: &str,
    ) -> Result<Verdict, AgentError> {
        if task.trim().is_empty() {
            return Err(AgentError::EmptyInput("task"));
        }
        if history.is_empty() {
            return Err(AgentError::EmptyInput("history"));
        }
        let user = fill(
            prompts::VERIFIER_USER,
            &[
                ("TASK", task),
                ("ACTION_HISTORY", &numbered(history)),
                ("RESPONSE", "N/A"),
                ("FINAL_MARKDOWN", final_markdown),
            ],
        );
        let mut req = ChatRequest::new(fill(prompts::VERIFIER_SYSTEM, &[])).text(user);
        for s in screenshots {
            req = req.image(s.clone());
        }
        let resp = self.client.complete(&req, Stage::Verification)?;
        parse_verdict(&resp.text)
    }

    pub fn generate_reasoning(
        &self,
        action: &Action,
        task: &str,
        obs: &PageObservation,
        history: &[String],
    ) -> Result<String, AgentError> {
        let tree = serialize_a11y(&obs.a11y, self.config.a11y_limit);
        let user = fill(
            prompts::REASONING_USER,
            &[
                ("TASK", task),
                ("ACTION_HISTORY", &numbered(history)),
                ("A11Y_TREE", &tree),
                ("ACTION", &render_action(action)),
            ],
        );
        let req = ChatRequest::new(fill(prompts::REASONING_SYSTEM, &[]))
            .text(user)
            .image(obs.som_screenshot.clone());
        let resp = self.client.complete(&req, Stage::Reasoning)?;
        Ok(resp.text.trim().to_string())
    }
}

const QUOTES: &[char] = &['"', '\'', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}', '`'];

/// Quote characters, except apostrophes between two letters or digits.
fn has_quotes(s: &str) -> bool {
    let chars: Vec<char> = s.chars().collect();
    chars.iter().enumerate().any(|(i, &c)| {
        if !QUOTES.contains(&c) {
            return false;
        }
        let inner = i > 0 && i + 1 < chars.len() && chars[i - 1].is_alphanumeric() && chars[i + 1].is_alphanumeric();
        !(matches!(c, '\'' | '\u{2019}') && inner)
    })
}

/// Summary answer from the last fenced block, with rule warnings attached.
pub fn parse_summary(text: &str) -> Result<Summary, AgentError> {
    let block = last_fenced_block(text).ok_or(PayloadError::NoPayloadFound)?;
    let mut task = crate::util::collapse_ws(block);
    for (open, close) in [('"', '"'), ('\'', '\''), ('\u{201c}', '\u{201d}')] {
        if task.len() >= 2 && task.starts_with(open) && task.ends_with(close) {
            task = task[open.len_utf8()..task.len() - close.len_utf8()].trim().to_string();
        }
    }
    if task.is_empty() {
        return Err(PayloadError::NoPayloadFound.into());
    }
    let mut warnings = Vec::new();
    if has_quotes(&task) {
        warnings.push("summary contains quotation marks".to_string());
    }
    if !names_site_at_end(&task) {
        warnings.push("summary does not end with an on-website clause".to_string());
    }
    Ok(Summary { task, warnings })
}

/// True when one of the last six words is `on`, `from` or `at`.
fn names_site_at_end(task: &str) -> bool {
    let words: Vec<String> = task
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .collect();
    words
        .iter()
        .rev()
        .take(6)
        .skip(1)
        .any(|w| matches!(w.as_str(), "on" | "from" | "at"))
}

/// Two-line verifier contract. The last `Status:` line decides; markdown
/// emphasis, quotes and case are ignored. Lines between `Thoughts:` and
/// `Status:` belong to the thoughts.
pub fn parse_verdict(text: &str) -> Result<Verdict, AgentError> {
    let mut thoughts: Vec<String> = Vec::new();
    let mut in_thoughts = false;
    let mut status = None;
    for line in text.lines() {
        let clean = line.trim().trim_start_matches(['#', '-', '>', ' ']).replace("**", "").replace("__", "");
        let clean = clean.trim();
        let lower = clean.to_ascii_lowercase();
        if let Some(rest) = lower.strip_prefix("status:") {
            let value = rest.trim().trim_matches(|c: char| QUOTES.contains(&c) || c == '*' || c == '.' || c.is_whitespace());
            status = match value {
                "success" => Some(VerdictStatus::Success),
                "failure" => Some(VerdictStatus::Failure),
                _ => None,
            };
            in_thoughts = false;
        } else if lower.starts_with("thoughts:") {
            thoughts = vec![clean["thoughts:".len()..].trim().to_string()];
            in_thoughts = true;
        } else if in_thoughts && !clean.is_empty() {
            thoughts.push(clean.to_string());
        }
    }
    let status = status.ok_or(AgentError::MalformedVerdict)?;
    Ok(Verdict { thoughts: thoughts.join("\n").trim().to_string(), status })
}
