//! Deterministic full-page wireframes for fixture pages, drawn from the
//! `data-bbox` geometry in the markup. No fonts or layout engine involved.

use image::{Rgba, RgbaImage};

use crate::page::{build_a11y, BBox, PageError, Screenshot, Viewport};

const WHITE: [u8; 4] = [255, 255, 255, 255];
const MARGIN: u32 = 16;

fn swatch(tag: &str) -> Option<([u8; 4], Option<[u8; 4]>)> {
    Some(match tag {
        "img" | "picture" | "video" => ([205, 222, 240, 255], Some([150, 175, 205, 255])),
        "h1" | "h2" | "h3" => ([70, 70, 70, 255], None),
        "h4" | "h5" | "h6" | "strong" | "b" => ([110, 110, 110, 255], None),
        "p" | "span" | "li" | "td" | "th" | "label" | "small" | "em" | "figcaption" => ([190, 190, 190, 255], None),
        "header" | "nav" | "footer" => ([235, 238, 242, 255], Some([210, 214, 220, 255])),
        "table" | "ul" | "ol" | "section" | "article" | "aside" | "form" | "div" | "main" => {
            ([248, 248, 248, 255], Some([228, 228, 228, 255]))
        }
        _ => ([240, 240, 240, 255], None),
    })
}

fn role_swatch(role: &str) -> ([u8; 4], [u8; 4]) {
    match role {
        "button" => ([70, 110, 200, 255], [40, 70, 150, 255]),
        "link" => ([225, 235, 250, 255], [40, 90, 200, 255]),
        "textbox" | "searchbox" | "spinbutton" => (WHITE, [120, 120, 120, 255]),
        "combobox" | "listbox" => ([250, 250, 250, 255], [90, 90, 90, 255]),
        "checkbox" | "radio" | "switch" => (WHITE, [60, 60, 60, 255]),
        _ => ([230, 230, 230, 255], [150, 150, 150, 255]),
    }
}

/// Renders the whole document at `width` pixels; the height covers the
/// lowest box plus a margin.
pub fn render_wireframe(html: &str, width: u32) -> Result<Screenshot, PageError> {
    let a11y = build_a11y(html, Viewport::new(width, 720))?;
    let doc = scraper::Html::parse_document(html);
    let mut shapes: Vec<(BBox, [u8; 4], Option<[u8; 4]>)> = Vec::new();
    for node in doc.tree.root().descendants() {
        let Some(el) = node.value().as_element() else { continue };
        if ancestors_hidden(node) {
            continue;
        }
        let Some(b) = el.attr("data-bbox").and_then(crate::page::parse_bbox_attr) else { continue };
        if let Some((fill, border)) = swatch(el.name()) {
            shapes.push((b, fill, border));
        }
    }
    for e in &a11y.elements {
        let (fill, border) = role_swatch(&e.role);
        shapes.push((e.bbox, fill, Some(border)));
    }
    let bottom = shapes
        .iter()
        .map(|(b, ..)| i64::from(b.y) + i64::from(b.h))
        .max()
        .unwrap_or(0)
        .max(0) as u32;
    let height = bottom.saturating_add(MARGIN).max(MARGIN);
    let mut img = RgbaImage::from_pixel(width.max(1), height, Rgba(WHITE));
    for (b, fill, border) in shapes {
        paint(&mut img, b, fill, border);
    }
    Ok(Screenshot::new(img))
}

fn ancestors_hidden(node: ego_tree::NodeRef<'_, scraper::Node>) -> bool {
    std::iter::successors(Some(node), |n| n.parent()).any(crate::page::dom_is_hidden)
}

fn paint(img: &mut RgbaImage, b: BBox, fill: [u8; 4], border: Option<[u8; 4]>) {
    let (iw, ih) = (i64::from(img.width()), i64::from(img.height()));
    let x0 = i64::from(b.x).clamp(0, iw);
    let y0 = i64::from(b.y).clamp(0, ih);
    let x1 = (i64::from(b.x) + i64::from(b.w)).clamp(0, iw);
    let y1 = (i64::from(b.y) + i64::from(b.h)).clamp(0, ih);
    for y in y0..y1 {
        for x in x0..x1 {
            let edge = x == i64::from(b.x) || y == i64::from(b.y) || x + 1 == x1 || y + 1 == y1;
            let c = match border {
                Some(bc) if edge => bc,
                _ => fill,
            };
            img.put_pixel(x as u32, y as u32, Rgba(c));
        }
    }
}
