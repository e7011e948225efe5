use scraper::Node;

use super::dom::{self, DomNode};
use super::{A11ySnapshot, BBox, ElementNode, PageError, Viewport};
use crate::action::ElementIndex;

const INTERACTIVE_ROLES: &[&str] = &[
    "button", "link", "checkbox", "radio", "tab", "menuitem", "menuitemcheckbox",
    "menuitemradio", "option", "switch", "textbox", "searchbox", "combobox", "listbox",
    "slider", "spinbutton", "treeitem",
];

/// Builds the accessibility snapshot of a document at scroll offset zero.
pub fn build_a11y(html: &str, viewport: Viewport) -> Result<A11ySnapshot, PageError> {
    build_a11y_scrolled(html, viewport, 0)
}

/// Enumerates interactive elements in document order.
///
/// An element is enumerated when it is a link with `href`, a button, a
/// non-hidden input, a textarea, a select, carries an `onclick` handler, or
/// has an interactive ARIA role. Its name is the first non-empty of
/// `aria-label`, alt text, `value`, visible text, `placeholder`, `title`.
///
/// Geometry comes from `data-bbox="x,y,w,h"` in document pixels when present;
/// otherwise elements are stacked in a single column (8px margin, 24px rows
/// on a 32px pitch). Off-viewport elements are kept and flagged non-visible.
pub fn build_a11y_scrolled(
    html: &str,
    viewport: Viewport,
    scroll_y: u32,
) -> Result<A11ySnapshot, PageError> {
    let doc = dom::parse(html)?;
    let mut elements = Vec::new();
    let mut path = Vec::new();
    walk(doc.tree.root(), &mut path, &mut elements, viewport, scroll_y);
    Ok(A11ySnapshot { url: String::new(), viewport, scroll_y, elements })
}

fn walk(
    node: DomNode<'_>,
    path: &mut Vec<usize>,
    out: &mut Vec<ElementNode>,
    vp: Viewport,
    scroll_y: u32,
) {
    if dom::is_hidden(node) {
        return;
    }
    if matches!(node.value(), Node::Element(_)) {
        if let Some(role) = role_of(node) {
            let ordinal = out.len();
            let name = name_of(node, &role);
            let options = if role == "combobox" || role == "listbox" {
                options_of(node)
            } else {
                Vec::new()
            };
            let doc_box = dom::attr(node, "data-bbox")
                .and_then(parse_bbox)
                .unwrap_or_else(|| fallback_box(ordinal, &name, vp));
            let bbox = BBox::new(
                doc_box.x,
                doc_box.y.saturating_sub(scroll_y as i32),
                doc_box.w,
                doc_box.h,
            );
            let disabled = dom::attr(node, "disabled").is_some()
                || dom::attr(node, "aria-disabled").is_some_and(|v| v.eq_ignore_ascii_case("true"));
            out.push(ElementNode {
                index: ElementIndex(ordinal as u32),
                role,
                name,
                bbox,
                interactable: !disabled,
                visible: bbox.clip(vp).is_some(),
                options,
                source_ref: source_ref(path),
            });
        }
    }
    let mut child_pos = 0;
    for child in node.children() {
        if matches!(child.value(), Node::Element(_)) {
            path.push(child_pos);
            walk(child, path, out, vp, scroll_y);
            path.pop();
            child_pos += 1;
        }
    }
}

fn source_ref(path: &[usize]) -> String {
    let mut s = String::new();
    for p in path {
        s.push('/');
        s.push_str(&p.to_string());
    }
    s
}

fn role_of(node: DomNode<'_>) -> Option<String> {
    let tag = dom::tag(node)?;
    let aria = dom::attr(node, "role").map(|r| r.trim().to_ascii_lowercase());
    if let Some(r) = aria.as_deref() {
        if INTERACTIVE_ROLES.contains(&r) {
            return Some(r.to_string());
        }
    }
    let native = match tag {
        "a" if dom::attr(node, "href").is_some() => Some("link"),
        "button" => Some("button"),
        "textarea" => Some("textbox"),
        "select" => Some(if dom::attr(node, "multiple").is_some() { "listbox" } else { "combobox" }),
        "input" => {
            let ty = dom::attr(node, "type").unwrap_or("text").trim().to_ascii_lowercase();
            Some(match ty.as_str() {
                "button" | "submit" | "reset" | "image" => "button",
                "checkbox" => "checkbox",
                "radio" => "radio",
                "search" => "searchbox",
                "range" => "slider",
                "number" => "spinbutton",
                _ => "textbox",
            })
        }
        _ => None,
    };
    if let Some(r) = native {
        return Some(r.to_string());
    }
    if dom::attr(node, "onclick").is_some() {
        return Some(aria.filter(|r| !r.is_empty()).unwrap_or_else(|| "generic".to_string()));
    }
    None
}

fn name_of(node: DomNode<'_>, role: &str) -> String {
    let candidates = [
        dom::attr(node, "aria-label").map(dom::collapse_ws),
        dom::alt_text(node),
        dom::attr(node, "value").map(dom::collapse_ws),
        if role == "textbox" || role == "searchbox" {
            None
        } else {
            Some(dom::visible_text(node))
        },
        dom::attr(node, "placeholder").map(dom::collapse_ws),
        dom::attr(node, "title").map(dom::collapse_ws),
    ];
    candidates
        .into_iter()
        .flatten()
        .find(|s| !s.is_empty())
        .unwrap_or_default()
}

fn options_of(node: DomNode<'_>) -> Vec<String> {
    node.descendants()
        .filter(|d| dom::tag(*d) == Some("option") && !dom::is_hidden(*d))
        .map(|d| {
            let text = dom::visible_text(d);
            if text.is_empty() {
                dom::attr(d, "value").map(dom::collapse_ws).unwrap_or_default()
            } else {
                text
            }
        })
        .filter(|t| !t.is_empty())
        .collect()
}

pub(crate) fn parse_bbox(s: &str) -> Option<BBox> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return None;
    }
    let x = parts[0].parse::<i32>().ok()?;
    let y = parts[1].parse::<i32>().ok()?;
    let w = parts[2].parse::<u32>().ok()?;
    let h = parts[3].parse::<u32>().ok()?;
    Some(BBox::new(x, y, w, h))
}

fn fallback_box(ordinal: usize, name: &str, vp: Viewport) -> BBox {
    let y = 8 + 32 * ordinal as i64;
    let text_w = 16 + 8 * name.chars().count() as u32;
    BBox::new(8, y.min(i64::from(i32::MAX)) as i32, text_w.min(vp.width.saturating_sub(16)), 24)
}

/// One `[idx] [role] [name]` line per element, first `limit` elements.
pub fn serialize_a11y(s: &A11ySnapshot, limit: usize) -> String {
    s.elements
        .iter()
        .take(limit)
        .map(|e| format!("[{}] [{}] [{}]", e.index, e.role, e.name))
        .collect::<Vec<_>>()
        .join("\n")
}
