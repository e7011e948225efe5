//! Textual and visual page representations consumed by the agents.

mod a11y;
mod candidates;
mod dom;
mod markdown;
mod screenshot;
mod som;

pub use a11y::{build_a11y, build_a11y_scrolled, serialize_a11y};
pub use candidates::{select_candidates, HeuristicRanker, Ranker};
pub use markdown::render_markdown;
pub use screenshot::Screenshot;
pub use som::{annotate_som, tag_digits_width, TAG_HEIGHT};

pub(crate) use a11y::parse_bbox as parse_bbox_attr;
pub(crate) use dom::is_hidden as dom_is_hidden;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ElementIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Viewport {
    pub width: u32,
    pub height: u32,
}

impl Viewport {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }
}

impl Default for Viewport {
    fn default() -> Self {
        Self::new(1280, 720)
    }
}

/// Pixel rectangle. `x`/`y` may be negative for elements scrolled past.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct BBox {
    pub x: i32,
    pub y: i32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub const fn new(x: i32, y: i32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    /// Intersection with the viewport rectangle anchored at the origin.
    pub fn clip(&self, vp: Viewport) -> Option<BBox> {
        let x0 = i64::from(self.x).max(0);
        let y0 = i64::from(self.y).max(0);
        let x1 = (i64::from(self.x) + i64::from(self.w)).min(i64::from(vp.width));
        let y1 = (i64::from(self.y) + i64::from(self.h)).min(i64::from(vp.height));
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(BBox::new(x0 as i32, y0 as i32, (x1 - x0) as u32, (y1 - y0) as u32))
    }

    pub fn visible_area(&self, vp: Viewport) -> u64 {
        self.clip(vp).map_or(0, |b| b.area())
    }
}

/// Roles that carry a list of options.
pub const SELECTION_ROLES: &[&str] = &["combobox", "listbox"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementNode {
    pub index: ElementIndex,
    pub role: String,
    pub name: String,
    /// Viewport pixels at the snapshot's scroll offset.
    pub bbox: BBox,
    pub interactable: bool,
    /// Intersects the viewport with positive area.
    pub visible: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    /// Structural path of child-element positions from the document root.
    pub source_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct A11ySnapshot {
    pub url: String,
    pub viewport: Viewport,
    #[serde(default)]
    pub scroll_y: u32,
    pub elements: Vec<ElementNode>,
}

impl A11ySnapshot {
    pub fn get(&self, idx: ElementIndex) -> Option<&ElementNode> {
        self.elements
            .binary_search_by_key(&idx, |e| e.index)
            .ok()
            .map(|pos| &self.elements[pos])
    }

    pub fn contains(&self, idx: ElementIndex) -> bool {
        self.get(idx).is_some()
    }

    pub fn visible_elements(&self) -> impl Iterator<Item = &ElementNode> {
        self.elements.iter().filter(|e| e.visible)
    }
}

/// One environment snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageObservation {
    pub screenshot: Screenshot,
    pub som_screenshot: Screenshot,
    pub a11y: A11ySnapshot,
    pub html: String,
    pub url: String,
    /// Digest of the DOM state plus scroll offset at observation time.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PageError {
    #[error("document could not be parsed")]
    UnparseableDocument,
    #[error("must-include element {0} is not in the snapshot")]
    MustIncludeMissing(ElementIndex),
    #[error("bounding box of element {0} does not fit within the image")]
    BboxOutOfBounds(ElementIndex),
    #[error("image error: {0}")]
    Image(String),
}
