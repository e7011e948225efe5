//! The action language shared by agents, environments and training exports.
//!
//! Canonical form is lowercase verb followed by bracket-delimited arguments,
//! e.g. `click [127]`, `type [43] [content to type]`, `scroll [down]`, `stop`.

pub(crate) mod payload;

pub use payload::{
    parse_agent_payload, parse_training_action, render_training_action, AgentPayload,
    PayloadError,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Position of an element in an accessibility snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementIndex(pub u32);

impl fmt::Display for ElementIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u32> for ElementIndex {
    fn from(v: u32) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScrollDirection {
    Up,
    Down,
}

impl ScrollDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            ScrollDirection::Up => "up",
            ScrollDirection::Down => "down",
        }
    }
}

/// A grounded web action.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Action {
    Click { elem: ElementIndex },
    Type { elem: ElementIndex, text: String },
    Select { elem: ElementIndex, option: String },
    Goto { url: String },
    SearchGoogle { query: String },
    Scroll { direction: ScrollDirection },
    Stop,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("unknown action verb `{0}`")]
    UnknownVerb(String),
    #[error("arguments must be enclosed in square brackets: `{0}`")]
    MalformedBrackets(String),
    #[error("element id is not a non-negative integer: `{0}`")]
    BadIndex(String),
    #[error("missing argument for `{0}`")]
    MissingArgument(&'static str),
    #[error("quotation marks are not allowed inside an action")]
    QuotationMarks,
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

const DOUBLE_QUOTES: [char; 3] = ['"', '\u{201c}', '\u{201d}'];

impl Action {
    pub fn verb(&self) -> &'static str {
        match self {
            Action::Click { .. } => "click",
            Action::Type { .. } => "type",
            Action::Select { .. } => "select",
            Action::Goto { .. } => "goto",
            Action::SearchGoogle { .. } => "search_google",
            Action::Scroll { .. } => "scroll",
            Action::Stop => "stop",
        }
    }

    pub fn element(&self) -> Option<ElementIndex> {
        match self {
            Action::Click { elem } | Action::Type { elem, .. } | Action::Select { elem, .. } => {
                Some(*elem)
            }
            _ => None,
        }
    }

    pub fn is_scroll(&self) -> bool {
        matches!(self, Action::Scroll { .. })
    }

    pub fn is_stop(&self) -> bool {
        matches!(self, Action::Stop)
    }

    /// Checks the free-text argument invariants: trimmed, non-empty, single
    /// line, free of double quotes.
    pub fn validate(&self) -> Result<(), ActionError> {
        let (name, text) = match self {
            Action::Type { text, .. } => ("type", text),
            Action::Select { option, .. } => ("select", option),
            Action::Goto { url } => ("goto", url),
            Action::SearchGoogle { query } => ("search_google", query),
            _ => return Ok(()),
        };
        check_text(name, text)
    }
}

fn check_text(verb: &'static str, text: &str) -> Result<(), ActionError> {
    if text.trim().is_empty() {
        return Err(ActionError::MissingArgument(verb));
    }
    if text.trim() != text {
        return Err(ActionError::InvalidArgument("argument has surrounding whitespace"));
    }
    if text.contains(DOUBLE_QUOTES) {
        return Err(ActionError::QuotationMarks);
    }
    if text.chars().any(char::is_control) {
        return Err(ActionError::InvalidArgument("argument contains control characters"));
    }
    Ok(())
}

/// Canonical lowercase rendering with single spaces between arguments.
pub fn render_action(a: &Action) -> String {
    match a {
        Action::Click { elem } => format!("click [{elem}]"),
        Action::Type { elem, text } => format!("type [{elem}] [{text}]"),
        Action::Select { elem, option } => format!("select [{elem}] [{option}]"),
        Action::Goto { url } => format!("goto [{url}]"),
        Action::SearchGoogle { query } => format!("search_google [{query}]"),
        Action::Scroll { direction } => format!("scroll [{}]", direction.as_str()),
        Action::Stop => "stop".to_string(),
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_action(self))
    }
}

impl From<Action> for String {
    fn from(a: Action) -> String {
        render_action(&a)
    }
}

impl TryFrom<String> for Action {
    type Error = ActionError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        parse_action(&s)
    }
}

impl FromStr for Action {
    type Err = ActionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_action(s)
    }
}

/// Parses a single-line action string.
///
/// Verbs match case-insensitively. `search_google` and `google_search` are
/// both accepted. For `type`/`select`/`goto`/`search_google` the final
/// argument runs from the opening bracket to the last `]` of the line, so it
/// may itself contain brackets.
pub fn parse_action(text: &str) -> Result<Action, ActionError> {
    let s = strip_outer_quotes(text.trim());
    if s.contains(DOUBLE_QUOTES) {
        return Err(ActionError::QuotationMarks);
    }

    let verb_end = s
        .find(|c: char| c.is_whitespace() || c == '[')
        .unwrap_or(s.len());
    let verb = s[..verb_end].to_ascii_lowercase();
    let rest = s[verb_end..].trim_start();

    let action = match verb.as_str() {
        "click" => {
            let (idx, tail) = bracket_arg(rest, "click")?;
            if !tail.trim().is_empty() {
                return Err(ActionError::MalformedBrackets(s.to_string()));
            }
            Action::Click { elem: parse_index(idx)? }
        }
        "type" => {
            let (elem, text) = index_and_text(rest, "type", s)?;
            Action::Type { elem, text }
        }
        "select" => {
            let (elem, option) = index_and_text(rest, "select", s)?;
            Action::Select { elem, option }
        }
        "goto" => Action::Goto { url: trailing_text(rest, "goto", s)? },
        "search_google" | "google_search" => Action::SearchGoogle {
            query: trailing_text(rest, "search_google", s)?,
        },
        "scroll" => {
            let (dir, tail) = bracket_arg(rest, "scroll")?;
            if !tail.trim().is_empty() {
                return Err(ActionError::MalformedBrackets(s.to_string()));
            }
            let direction = match dir.trim().to_ascii_lowercase().as_str() {
                "up" => ScrollDirection::Up,
                "down" => ScrollDirection::Down,
                "" => return Err(ActionError::MissingArgument("scroll")),
                _ => return Err(ActionError::InvalidArgument("scroll direction must be up or down")),
            };
            Action::Scroll { direction }
        }
        // `stop [answer]` is tolerated; the answer is discarded.
        "stop" => {
            if !rest.is_empty() && !(rest.starts_with('[') && rest.ends_with(']')) {
                return Err(ActionError::MalformedBrackets(s.to_string()));
            }
            Action::Stop
        }
        "" => return Err(ActionError::UnknownVerb(String::new())),
        other => return Err(ActionError::UnknownVerb(other.to_string())),
    };
    action.validate()?;
    Ok(action)
}

fn strip_outer_quotes(s: &str) -> &str {
    for (open, close) in [('"', '"'), ('\'', '\''), ('`', '`'), ('\u{201c}', '\u{201d}')] {
        if s.len() >= 2 && s.starts_with(open) && s.ends_with(close) {
            return s[open.len_utf8()..s.len() - close.len_utf8()].trim();
        }
    }
    s
}

/// Splits `[arg] tail` into (`arg`, `tail`), where `arg` ends at the first `]`.
fn bracket_arg<'a>(s: &'a str, verb: &'static str) -> Result<(&'a str, &'a str), ActionError> {
    if s.is_empty() {
        return Err(ActionError::MissingArgument(verb));
    }
    let inner = s
        .strip_prefix('[')
        .ok_or_else(|| ActionError::MalformedBrackets(s.to_string()))?;
    let close = inner
        .find(']')
        .ok_or_else(|| ActionError::MalformedBrackets(s.to_string()))?;
    Ok((&inner[..close], &inner[close + 1..]))
}

/// `[text]` where `text` extends to the final `]`.
fn trailing_text(s: &str, verb: &'static str, line: &str) -> Result<String, ActionError> {
    if s.is_empty() {
        return Err(ActionError::MissingArgument(verb));
    }
    let inner = s
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| ActionError::MalformedBrackets(line.to_string()))?;
    let text = inner.trim();
    if text.is_empty() {
        return Err(ActionError::MissingArgument(verb));
    }
    Ok(text.to_string())
}

fn index_and_text(
    s: &str,
    verb: &'static str,
    line: &str,
) -> Result<(ElementIndex, String), ActionError> {
    let (idx, tail) = bracket_arg(s, verb)?;
    let elem = parse_index(idx)?;
    let text = trailing_text(tail.trim_start(), verb, line)?;
    Ok((elem, text))
}

fn parse_index(s: &str) -> Result<ElementIndex, ActionError> {
    let t = s.trim();
    if t.is_empty() {
        return Err(ActionError::BadIndex(s.to_string()));
    }
    if !t.bytes().all(|b| b.is_ascii_digit()) {
        return Err(ActionError::BadIndex(t.to_string()));
    }
    t.parse::<u32>()
        .map(ElementIndex)
        .map_err(|_| ActionError::BadIndex(t.to_string()))
}
