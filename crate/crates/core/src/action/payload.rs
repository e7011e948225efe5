use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::{parse_action, Action, ActionError, ElementIndex, ScrollDirection};

/// What the proposer and refiner hand back: the (updated) task plus the next
/// action in both natural-language and grounded form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentPayload {
    pub task: String,
    pub action_nl: String,
    pub grounded: Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PayloadError {
    #[error("no payload object found in response")]
    NoPayloadFound,
    #[error("payload is missing key `{0}`")]
    MissingKey(&'static str),
    #[error("grounded action could not be parsed: {0}")]
    GroundedActionUnparseable(#[source] ActionError),
    #[error("unknown training action `{0}`")]
    UnknownVerb(String),
    #[error("bad element index: {0}")]
    BadIndex(String),
}

/// Extracts the proposer/refiner answer object.
///
/// The last triple-backtick fence wins; completions frequently echo the
/// schema example before answering. Without any fence, the first balanced
/// `{...}` object that parses as JSON is used.
pub fn parse_agent_payload(response: &str) -> Result<AgentPayload, PayloadError> {
    let obj = locate_object(response).ok_or(PayloadError::NoPayloadFound)?;
    let task = string_key(&obj, "task")?;
    let action_nl = string_key(&obj, "action_in_natural_language")?;
    let grounded_raw = string_key(&obj, "grounded_action")?;
    let grounded = parse_action(&grounded_raw).map_err(PayloadError::GroundedActionUnparseable)?;
    Ok(AgentPayload { task, action_nl, grounded })
}

fn string_key(obj: &Map<String, Value>, key: &'static str) -> Result<String, PayloadError> {
    match obj.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        _ => Err(PayloadError::MissingKey(key)),
    }
}

fn locate_object(text: &str) -> Option<Map<String, Value>> {
    if let Some(block) = last_fenced_block(text) {
        if let Some(obj) = as_object(block) {
            return Some(obj);
        }
        if let Some(obj) = first_balanced_object(block) {
            return Some(obj);
        }
    }
    first_balanced_object(text)
}

/// Content of the last complete ``` ... ``` pair, with an optional language
/// tag line removed.
pub(crate) fn last_fenced_block(text: &str) -> Option<&str> {
    let marks: Vec<usize> = text.match_indices("```").map(|(i, _)| i).collect();
    if marks.len() < 2 {
        return None;
    }
    let pair = marks.len() / 2 - 1;
    let (open, close) = (marks[2 * pair] + 3, marks[2 * pair + 1]);
    let mut body = &text[open..close];
    if let Some(nl) = body.find('\n') {
        let tag = body[..nl].trim();
        if !tag.is_empty() && tag.chars().all(|c| c.is_ascii_alphanumeric()) {
            body = &body[nl + 1..];
        }
    }
    Some(body.trim())
}

fn as_object(s: &str) -> Option<Map<String, Value>> {
    match serde_json::from_str::<Value>(s) {
        Ok(Value::Object(m)) => Some(m),
        _ => None,
    }
}

fn first_balanced_object(text: &str) -> Option<Map<String, Value>> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(off) = text[start..].find('{') {
        let begin = start + off;
        if let Some(end) = balanced_end(bytes, begin) {
            if let Some(obj) = as_object(&text[begin..=end]) {
                return Some(obj);
            }
        }
        start = begin + 1;
    }
    None
}

/// Index of the `}` closing the brace at `begin`, skipping JSON strings.
fn balanced_end(bytes: &[u8], begin: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(begin) {
        if in_str {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Maps a training-schema record (`action`, `action_natural_language`,
/// optional `idx`, optional `value`) onto an [`Action`].
pub fn parse_training_action(obj: &Value) -> Result<Action, PayloadError> {
    let verb = obj
        .get("action")
        .and_then(Value::as_str)
        .ok_or(PayloadError::MissingKey("action"))?
        .trim()
        .to_ascii_lowercase();
    let verb = verb.split_whitespace().collect::<Vec<_>>().join(" ");

    let value = || -> Result<String, PayloadError> {
        match obj.get("value") {
            Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_string()),
            Some(Value::Number(n)) => Ok(n.to_string()),
            _ => Err(PayloadError::MissingKey("value")),
        }
    };
    let idx = || -> Result<ElementIndex, PayloadError> {
        match obj.get("idx") {
            Some(Value::Number(n)) => n
                .as_u64()
                .and_then(|v| u32::try_from(v).ok())
                .map(ElementIndex)
                .ok_or_else(|| PayloadError::BadIndex(n.to_string())),
            Some(Value::String(s)) => s
                .trim()
                .parse::<u32>()
                .map(ElementIndex)
                .map_err(|_| PayloadError::BadIndex(s.clone())),
            Some(other) => Err(PayloadError::BadIndex(other.to_string())),
            None => Err(PayloadError::MissingKey("idx")),
        }
    };

    let action = match verb.as_str() {
        "click" => Action::Click { elem: idx()? },
        "type" => Action::Type { elem: idx()?, text: value()? },
        "select" => Action::Select { elem: idx()?, option: value()? },
        "goto" => Action::Goto { url: value()? },
        "google_search" | "search_google" => Action::SearchGoogle { query: value()? },
        "scroll [up]" | "scroll up" => Action::Scroll { direction: ScrollDirection::Up },
        "scroll [down]" | "scroll down" => Action::Scroll { direction: ScrollDirection::Down },
        "scroll" => match value()?.to_ascii_lowercase().as_str() {
            "up" => Action::Scroll { direction: ScrollDirection::Up },
            "down" => Action::Scroll { direction: ScrollDirection::Down },
            other => return Err(PayloadError::UnknownVerb(format!("scroll {other}"))),
        },
        "stop" => Action::Stop,
        _ => return Err(PayloadError::UnknownVerb(verb)),
    };
    action
        .validate()
        .map_err(PayloadError::GroundedActionUnparseable)?;
    Ok(action)
}

/// Inverse of [`parse_training_action`]: the training-target object.
pub fn render_training_action(action: &Action, action_nl: &str) -> Value {
    let mut m = Map::new();
    let verb = match action {
        Action::Scroll { direction } => format!("scroll [{}]", direction.as_str()),
        Action::SearchGoogle { .. } => "google_search".to_string(),
        other => other.verb().to_string(),
    };
    m.insert("action".into(), Value::String(verb));
    m.insert("action_natural_language".into(), Value::String(action_nl.to_string()));
    if let Some(elem) = action.element() {
        m.insert("idx".into(), Value::from(elem.0));
    }
    match action {
        Action::Type { text: v, .. }
        | Action::Select { option: v, .. }
        | Action::Goto { url: v }
        | Action::SearchGoogle { query: v } => {
            m.insert("value".into(), Value::String(v.clone()));
        }
        _ => {}
    }
    Value::Object(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn fenced_payload() {
        let r = "Analysis...\n```{\"task\":\"T\",\"action_in_natural_language\":\"N\",\"grounded_action\":\"stop\"}```";
        let p = parse_agent_payload(r).unwrap();
        assert_eq!(p, AgentPayload { task: "T".into(), action_nl: "N".into(), grounded: Action::Stop });
    }

    #[test]
    fn last_fence_wins_over_echoed_schema() {
        let r = r#"The format is ```{"task": <TASK>:str, "grounded_action": <ACTION>:str}```.
In summary, the proposed task and the corresponding action is:
```json
{"task": "Find deals", "action_in_natural_language": "Click the Deals link", "grounded_action": "click [5]"}
```"#;
        let p = parse_agent_payload(r).unwrap();
        assert_eq!(p.task, "Find deals");
        assert_eq!(p.action_nl, "Click the Deals link");
        assert_eq!(p.grounded, Action::Click { elem: ElementIndex(5) });
    }

    #[test]
    fn brace_fallback_without_fence() {
        let r = r#"Sure. {"task": "A", "action_in_natural_language": "B {x}", "grounded_action": "scroll [down]"} done"#;
        let p = parse_agent_payload(r).unwrap();
        assert_eq!(p.action_nl, "B {x}");
        assert!(p.grounded.is_scroll());
    }

    #[test]
    fn payload_errors() {
        assert_eq!(parse_agent_payload("nothing here"), Err(PayloadError::NoPayloadFound));
        assert_eq!(
            parse_agent_payload(r#"```{"task":"T","grounded_action":"stop"}```"#),
            Err(PayloadError::MissingKey("action_in_natural_language"))
        );
        assert!(matches!(
            parse_agent_payload(r#"```{"task":"T","action_in_natural_language":"N","grounded_action":"click 4"}```"#),
            Err(PayloadError::GroundedActionUnparseable(ActionError::MalformedBrackets(_)))
        ));
    }

    #[test]
    fn training_schema_mapping() {
        assert_eq!(
            parse_training_action(&json!({"action":"type","action_natural_language":"t","idx":7,"value":"laptop"})).unwrap(),
            Action::Type { elem: ElementIndex(7), text: "laptop".into() }
        );
        assert_eq!(
            parse_training_action(&json!({"action":"scroll [up]","action_natural_language":"s"})).unwrap(),
            Action::Scroll { direction: ScrollDirection::Up }
        );
        assert!(matches!(
            parse_training_action(&json!({"action":"fly"})),
            Err(PayloadError::UnknownVerb(_))
        ));
        assert_eq!(parse_training_action(&json!({"idx": 1})), Err(PayloadError::MissingKey("action")));
        assert_eq!(
            parse_training_action(&json!({"action":"click"})),
            Err(PayloadError::MissingKey("idx"))
        );
    }

    #[test]
    fn alias_collapse_across_forms() {
        let a = parse_action("search_google [q]").unwrap();
        let b = parse_training_action(&json!({"action":"google_search","value":"q"})).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_render_round_trip() {
        for s in [
            "click [3]",
            "type [4] [blue sofa]",
            "select [2] [Large]",
            "goto [https://example.com/a]",
            "search_google [best tents]",
            "scroll [up]",
            "scroll [down]",
            "stop",
        ] {
            let a = parse_action(s).unwrap();
            let v = render_training_action(&a, "nl");
            assert_eq!(parse_training_action(&v).unwrap(), a, "{s}");
        }
    }
}
