use std::cmp::Reverse;

use super::{A11ySnapshot, PageError};
use crate::action::ElementIndex;

/// Orders snapshot elements best-first.
pub trait Ranker: Send + Sync {
    /// Positions into `s.elements`, best first. Must be a permutation.
    fn rank(&self, s: &A11ySnapshot) -> Vec<usize>;
}

/// Interactable elements first, then larger on-screen area, then document
/// order.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicRanker;

impl Ranker for HeuristicRanker {
    fn rank(&self, s: &A11ySnapshot) -> Vec<usize> {
        let mut order: Vec<usize> = (0..s.elements.len()).collect();
        order.sort_by_key(|&i| {
            let e = &s.elements[i];
            (Reverse(e.interactable), Reverse(e.bbox.visible_area(s.viewport)), e.index)
        });
        order
    }
}

impl<F> Ranker for F
where
    F: Fn(&A11ySnapshot) -> Vec<usize> + Send + Sync,
{
    fn rank(&self, s: &A11ySnapshot) -> Vec<usize> {
        self(s)
    }
}

/// Keeps the top `k` elements under `ranker`, returned in document order with
/// their original indices. `must_include` displaces the last slot when it
/// ranks below `k`.
pub fn select_candidates(
    s: &A11ySnapshot,
    ranker: &dyn Ranker,
    k: usize,
    must_include: Option<ElementIndex>,
) -> Result<A11ySnapshot, PageError> {
    let forced = match must_include {
        Some(idx) => Some(
            s.elements
                .iter()
                .position(|e| e.index == idx)
                .ok_or(PageError::MustIncludeMissing(idx))?,
        ),
        None => None,
    };
    let k = k.max(1);
    let mut keep: Vec<usize> = ranker.rank(s).into_iter().take(k).collect();
    if let Some(pos) = forced {
        if !keep.contains(&pos) {
            if keep.len() == k {
                keep.pop();
            }
            keep.push(pos);
        }
    }
    keep.sort_unstable();
    Ok(A11ySnapshot {
        url: s.url.clone(),
        viewport: s.viewport,
        scroll_y: s.scroll_y,
        elements: keep.into_iter().map(|p| s.elements[p].clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::page::{BBox, ElementNode, Viewport};

    fn node(i: u32, area_w: u32, interactable: bool) -> ElementNode {
        ElementNode {
            index: ElementIndex(i),
            role: "button".into(),
            name: format!("b{i}"),
            bbox: BBox::new(0, 0, area_w, 10),
            interactable,
            visible: area_w > 0,
            options: vec![],
            source_ref: String::new(),
        }
    }

    fn snapshot(nodes: Vec<ElementNode>) -> A11ySnapshot {
        A11ySnapshot { url: String::new(), viewport: Viewport::new(100, 100), scroll_y: 0, elements: nodes }
    }

    fn ids(s: &A11ySnapshot) -> Vec<u32> {
        s.elements.iter().map(|e| e.index.0).collect()
    }

    #[test]
    fn k_at_least_len_is_identity() {
        let s = snapshot(vec![node(0, 5, true), node(1, 50, true), node(2, 10, false)]);
        assert_eq!(select_candidates(&s, &HeuristicRanker, 3, None).unwrap(), s);
        assert_eq!(select_candidates(&s, &HeuristicRanker, 10, None).unwrap(), s);
    }

    #[test]
    fn heuristic_order() {
        let s = snapshot(vec![node(0, 5, true), node(1, 50, true), node(2, 90, false), node(3, 50, true)]);
        assert_eq!(HeuristicRanker.rank(&s), vec![1, 3, 0, 2]);
        assert_eq!(ids(&select_candidates(&s, &HeuristicRanker, 2, None).unwrap()), [1, 3]);
    }

    #[test]
    fn must_include_replaces_last_slot() {
        let s = snapshot(vec![node(0, 5, true), node(1, 50, true), node(2, 90, false)]);
        let r = select_candidates(&s, &HeuristicRanker, 1, Some(ElementIndex(2))).unwrap();
        assert_eq!(ids(&r), [2]);
        let r = select_candidates(&s, &HeuristicRanker, 2, Some(ElementIndex(2))).unwrap();
        assert_eq!(ids(&r), [1, 2]);
        assert_eq!(
            select_candidates(&s, &HeuristicRanker, 2, Some(ElementIndex(9))),
            Err(PageError::MustIncludeMissing(ElementIndex(9)))
        );
    }

    #[test]
    fn closures_are_rankers() {
        let s = snapshot(vec![node(0, 5, true), node(1, 50, true), node(2, 90, false)]);
        let reverse = |s: &A11ySnapshot| (0..s.elements.len()).rev().collect::<Vec<_>>();
        assert_eq!(ids(&select_candidates(&s, &reverse, 1, None).unwrap()), [2]);
    }
}
