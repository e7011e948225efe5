use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Datastore, DatastoreError, TrajectoryRecord};
use crate::action::render_action;
use crate::util::count_tokens;

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsScope {
    All,
    SuccessOnly,
}

/// Per-trajectory token counts in equal-width bins starting at zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenHistogram {
    pub bin_width: u64,
    pub bins: Vec<u64>,
    /// Nearest-rank 90th percentile.
    pub p90: Option<u64>,
}

impl TokenHistogram {
    pub fn build(values: &[u64]) -> Self {
        let Some(&max) = values.iter().max() else {
            return Self { bin_width: 0, bins: Vec::new(), p90: None };
        };
        let bin_width = (max + 1).div_ceil(HISTOGRAM_BINS as u64).max(1);
        let mut bins = vec![0; HISTOGRAM_BINS];
        for v in values {
            bins[(v / bin_width) as usize] += 1;
        }
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        let rank = (sorted.len() * 9).div_ceil(10);
        Self { bin_width, bins, p90: Some(sorted[rank - 1]) }
    }

    /// `bin_start,bin_end,count,p90` rows; `p90` is 1 on the bin holding it.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start,bin_end,count,p90\n");
        for (i, c) in self.bins.iter().enumerate() {
            let lo = i as u64 * self.bin_width;
            let hi = lo + self.bin_width;
            let marked = self.p90.is_some_and(|p| p >= lo && p < hi);
            out.push_str(&format!("{lo},{hi},{c},{}\n", u8::from(marked)));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub scope: StatsScope,
    /// Readable records.
    pub n_total: u64,
    pub n_success: u64,
    /// Records skipped as unreadable.
    pub n_corrupt: u64,
    /// Records the remaining fields are computed over.
    pub n_counted: u64,
    pub by_status: BTreeMap<String, u64>,
    pub unique_urls: u64,
    pub avg_steps: f64,
    pub avg_elements_per_image: f64,
    pub tokens: u64,
    pub elements: u64,
    pub images: u64,
    pub token_histogram: TokenHistogram,
}

fn strip_fragment(url: &str) -> &str {
    url.split('#').next().unwrap_or(url)
}

/// Token count of one trajectory: every step's serialized accessibility
/// tree plus its canonical grounded action.
fn trajectory_tokens(store: &Datastore, rec: &TrajectoryRecord) -> Result<u64, DatastoreError> {
    let mut total = 0;
    for (i, s) in rec.steps.iter().enumerate() {
        total += count_tokens(&store.step_a11y_text(rec, i)?);
        total += count_tokens(&render_action(&s.grounded));
    }
    Ok(total)
}

/// One image per step; elements are the enumerated elements of each
/// step's snapshot. Unique URLs are fragment-stripped seed, step and final
/// page URLs.
pub fn compute_stats(store: &Datastore, scope: StatsScope) -> Result<DatasetStats, DatastoreError> {
    let mut n_total = 0;
    let mut n_success = 0;
    let mut n_corrupt = 0;
    let mut by_status = BTreeMap::new();
    let mut urls = BTreeSet::new();
    let mut steps = 0u64;
    let mut elements = 0u64;
    let mut token_counts = Vec::new();
    for id in store.list_ids()? {
        let rec = match store.load_record(&id) {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(%id, error = %e, "skipping unreadable record");
                n_corrupt += 1;
                continue;
            }
        };
        let counted = scope == StatsScope::All || rec.is_success();
        let tokens = if counted {
            match trajectory_tokens(store, &rec) {
                Ok(t) => Some(t),
                Err(e) => {
                    tracing::warn!(%id, error = %e, "skipping unreadable record");
                    n_corrupt += 1;
                    continue;
                }
            }
        } else {
            None
        };
        n_total += 1;
        *by_status.entry(rec.status.as_str().to_string()).or_insert(0) += 1;
        if rec.is_success() {
            n_success += 1;
        }
        let Some(tokens) = tokens else { continue };
        token_counts.push(tokens);
        urls.insert(strip_fragment(&rec.seed.url).to_string());
        for s in &rec.steps {
            urls.insert(strip_fragment(&s.url).to_string());
            elements += u64::from(s.element_count);
        }
        if let Some(f) = &rec.final_page {
            urls.insert(strip_fragment(&f.url).to_string());
        }
        steps += rec.steps.len() as u64;
    }
    let n_counted = token_counts.len() as u64;
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(DatasetStats {
        scope,
        n_total,
        n_success,
        n_corrupt,
        n_counted,
        by_status,
        unique_urls: urls.len() as u64,
        avg_steps: ratio(steps, n_counted),
        avg_elements_per_image: ratio(elements, steps),
        tokens: token_counts.iter().sum(),
        elements,
        images: steps,
        token_histogram: TokenHistogram::build(&token_counts),
    })
}

/// Success records with at most `max_scrolls` grounded scroll actions.
pub fn filter_training(store: &Datastore, max_scrolls: usize) -> Result<Vec<String>, DatastoreError> {
    let mut ids = Vec::new();
    for id in store.list_ids()? {
        match store.load_record(&id) {
            Ok(rec) if rec.is_success() && rec.scroll_count() <= max_scrolls => ids.push(id),
            Ok(_) => {}
            Err(e) => tracing::warn!(%id, error = %e, "skipping unreadable record"),
        }
    }
    Ok(ids)
}
