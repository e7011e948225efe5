//! Shared DOM helpers over the `scraper` tree.

use ego_tree::NodeRef;
use scraper::{Html, Node};

use super::PageError;

pub(crate) type DomNode<'a> = NodeRef<'a, Node>;

/// Elements whose subtrees never contribute content.
const SKIPPED_TAGS: &[&str] = &["head", "script", "style", "template", "noscript"];

pub(crate) fn parse(html: &str) -> Result<Html, PageError> {
    if is_catastrophic(html) {
        return Err(PageError::UnparseableDocument);
    }
    Ok(Html::parse_document(html))
}

/// NUL bytes, or a control-character ratio above one quarter, mean the input
/// is not markup at all.
fn is_catastrophic(html: &str) -> bool {
    if html.contains('\0') {
        return true;
    }
    let total = html.chars().count();
    if total == 0 {
        return false;
    }
    let ctrl = html
        .chars()
        .filter(|c| c.is_control() && !matches!(c, '\n' | '\r' | '\t'))
        .count();
    ctrl * 4 > total
}

pub(crate) fn tag(node: DomNode<'_>) -> Option<&str> {
    match node.value() {
        Node::Element(e) => Some(e.name()),
        _ => None,
    }
}

pub(crate) fn attr<'a>(node: DomNode<'a>, name: &str) -> Option<&'a str> {
    match node.value() {
        Node::Element(e) => e.attr(name),
        _ => None,
    }
}

/// Subtree is excluded from both the accessibility tree and markdown.
pub(crate) fn is_hidden(node: DomNode<'_>) -> bool {
    let Some(name) = tag(node) else { return false };
    if SKIPPED_TAGS.contains(&name) {
        return true;
    }
    if attr(node, "hidden").is_some() {
        return true;
    }
    if attr(node, "aria-hidden").is_some_and(|v| v.trim().eq_ignore_ascii_case("true")) {
        return true;
    }
    if name == "input" && attr(node, "type").is_some_and(|t| t.eq_ignore_ascii_case("hidden")) {
        return true;
    }
    if let Some(style) = attr(node, "style") {
        let compact: String = style
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect::<String>()
            .to_ascii_lowercase();
        if compact.contains("display:none") || compact.contains("visibility:hidden") {
            return true;
        }
    }
    false
}

pub(crate) use crate::util::collapse_ws;

/// Visible text of a subtree, whitespace-collapsed.
pub(crate) fn visible_text(node: DomNode<'_>) -> String {
    let mut out = String::new();
    push_text(node, &mut out);
    collapse_ws(&out)
}

fn push_text(node: DomNode<'_>, out: &mut String) {
    match node.value() {
        Node::Text(t) => out.push_str(t),
        Node::Element(_) => {
            if is_hidden(node) {
                return;
            }
            for child in node.children() {
                push_text(child, out);
            }
            out.push(' ');
        }
        Node::Document | Node::Fragment => {
            for child in node.children() {
                push_text(child, out);
            }
        }
        _ => {}
    }
}

/// First `alt` text of the node itself or an `img` descendant.
pub(crate) fn alt_text(node: DomNode<'_>) -> Option<String> {
    if let Some(a) = attr(node, "alt").map(collapse_ws).filter(|a| !a.is_empty()) {
        return Some(a);
    }
    node.descendants()
        .filter(|d| tag(*d) == Some("img"))
        .filter_map(|d| attr(d, "alt"))
        .map(collapse_ws)
        .find(|a| !a.is_empty())
}
