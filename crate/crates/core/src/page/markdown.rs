//! Deterministic HTML to markdown rendering for the verifier.
//!
//! Dialect: `#`-prefixed headings by level, `[text](href)` links,
//! `![alt](src)` images with alt text, `- ` list items (two-space indent per
//! nesting level), pipe table rows with a `---` separator after an all-header
//! first row, fenced `pre` blocks, `---` for `hr`. Scripts, styles and form
//! controls are dropped; emphasis is rendered as plain text. Blocks are
//! separated by one blank line.

use scraper::Node;

use super::dom::{self, collapse_ws, DomNode};
use super::PageError;

pub fn render_markdown(html: &str) -> Result<String, PageError> {
    let doc = dom::parse(html)?;
    let mut r = Renderer::default();
    r.block(doc.tree.root());
    r.flush();
    Ok(r.blocks.join("\n\n"))
}

#[derive(Default)]
struct Renderer {
    blocks: Vec<String>,
    inline: String,
}

const DROPPED: &[&str] = &["select", "option", "input", "textarea", "iframe", "svg", "canvas", "object"];
const BLOCKS: &[&str] = &[
    "html", "body", "p", "div", "section", "article", "header", "footer", "main", "nav", "aside",
    "form", "fieldset", "blockquote", "figure", "figcaption", "address", "dl", "dt", "dd",
    "details", "summary", "caption", "center",
];

impl Renderer {
    fn flush(&mut self) {
        let text = collapse_ws(&self.inline);
        self.inline.clear();
        if !text.is_empty() {
            self.blocks.push(text);
        }
    }

    fn push_block(&mut self, s: String) {
        self.flush();
        if !s.trim().is_empty() {
            self.blocks.push(s);
        }
    }

    fn block(&mut self, node: DomNode<'_>) {
        match node.value() {
            Node::Text(t) => self.inline.push_str(t),
            Node::Document | Node::Fragment => self.children(node),
            Node::Element(e) => {
                if dom::is_hidden(node) {
                    return;
                }
                let name = e.name();
                match name {
                    "h1" | "h2" | "h3" | "h4" | "h5" | "h6" => {
                        let level = usize::from(name.as_bytes()[1] - b'0');
                        let text = inline_text(node);
                        if !text.is_empty() {
                            self.push_block(format!("{} {}", "#".repeat(level), text));
                        } else {
                            self.flush();
                        }
                    }
                    "ul" | "ol" => {
                        let mut lines = Vec::new();
                        list_lines(node, 0, &mut lines);
                        self.push_block(lines.join("\n"));
                    }
                    "table" => self.push_block(table_rows(node).join("\n")),
                    "pre" => {
                        let raw: String = node
                            .descendants()
                            .filter_map(|d| match d.value() {
                                Node::Text(t) => Some(&**t),
                                _ => None,
                            })
                            .collect();
                        let raw = raw.trim_matches('\n');
                        if !raw.trim().is_empty() {
                            self.push_block(format!("```\n{raw}\n```"));
                        }
                    }
                    "hr" => self.push_block("---".into()),
                    "br" => self.flush(),
                    "a" | "img" => self.inline.push_str(&inline_text(node)),
                    _ if DROPPED.contains(&name) => {}
                    _ if BLOCKS.contains(&name) || name == "li" => {
                        self.flush();
                        self.children(node);
                        self.flush();
                    }
                    _ => self.children(node),
                }
            }
            _ => {}
        }
    }

    fn children(&mut self, node: DomNode<'_>) {
        for c in node.children() {
            self.block(c);
        }
    }
}

/// Inline rendering of a subtree, whitespace-collapsed.
fn inline_text(node: DomNode<'_>) -> String {
    let mut s = String::new();
    push_inline(node, &mut s);
    collapse_ws(&s)
}

fn push_inline(node: DomNode<'_>, out: &mut String) {
    match node.value() {
        Node::Text(t) => out.push_str(t),
        Node::Element(e) => {
            if dom::is_hidden(node) || DROPPED.contains(&e.name()) {
                return;
            }
            match e.name() {
                "a" => {
                    let mut label = String::new();
                    for c in node.children() {
                        push_inline(c, &mut label);
                    }
                    let mut label = collapse_ws(&label);
                    if label.is_empty() {
                        label = dom::alt_text(node).unwrap_or_default();
                    }
                    match e.attr("href") {
                        Some(href) if !label.is_empty() => {
                            out.push_str(&format!("[{label}]({})", href.trim()));
                        }
                        _ => out.push_str(&label),
                    }
                }
                "img" => {
                    if let Some(alt) = e.attr("alt").map(collapse_ws).filter(|a| !a.is_empty()) {
                        out.push_str(&format!("![{alt}]({})", e.attr("src").unwrap_or("").trim()));
                    }
                }
                "ul" | "ol" | "table" => {}
                name => {
                    let block = BLOCKS.contains(&name) || name == "br" || name == "li";
                    if block {
                        out.push(' ');
                    }
                    for c in node.children() {
                        push_inline(c, out);
                    }
                    if block {
                        out.push(' ');
                    }
                }
            }
        }
        _ => {}
    }
}

fn list_lines(list: DomNode<'_>, depth: usize, lines: &mut Vec<String>) {
    for item in list.children() {
        if dom::is_hidden(item) {
            continue;
        }
        match dom::tag(item) {
            Some("li") => {
                let text = inline_text(item);
                if !text.is_empty() {
                    lines.push(format!("{}- {}", "  ".repeat(depth), text));
                }
                for nested in item.children() {
                    if matches!(dom::tag(nested), Some("ul" | "ol")) && !dom::is_hidden(nested) {
                        list_lines(nested, depth + 1, lines);
                    }
                }
            }
            Some("ul" | "ol") => list_lines(item, depth + 1, lines),
            _ => {}
        }
    }
}

fn table_rows(table: DomNode<'_>) -> Vec<String> {
    let mut rows = Vec::new();
    collect_rows(table, &mut rows);
    let mut out = Vec::new();
    for (i, (cells, all_header)) in rows.iter().enumerate() {
        out.push(format!("| {} |", cells.join(" | ")));
        if i == 0 && *all_header {
            out.push(format!("|{}", " --- |".repeat(cells.len())));
        }
    }
    out
}

fn collect_rows(node: DomNode<'_>, rows: &mut Vec<(Vec<String>, bool)>) {
    for c in node.children() {
        if dom::is_hidden(c) {
            continue;
        }
        match dom::tag(c) {
            Some("tr") => {
                let cells: Vec<DomNode<'_>> = c
                    .children()
                    .filter(|d| matches!(dom::tag(*d), Some("td" | "th")) && !dom::is_hidden(*d))
                    .collect();
                if cells.is_empty() {
                    continue;
                }
                let all_header = cells.iter().all(|d| dom::tag(*d) == Some("th"));
                rows.push((cells.iter().map(|d| inline_text(*d)).collect(), all_header));
            }
            Some("table") => {}
            Some(_) => collect_rows(c, rows),
            None => {}
        }
    }
}
