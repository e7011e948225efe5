//! Generation cost accounting in integer micro-dollars.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::llm::{Stage, UsageByStage};

/// Prices in micro-dollars. With `flat_per_call` set for a stage, that stage
/// is billed per call instead of by tokens and images.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRates {
    /// Price of one million text tokens.
    pub per_million_tokens: u64,
    pub per_image: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub flat_per_call: BTreeMap<Stage, u64>,
}

impl Default for CostRates {
    /// $2.5 per million text tokens, $0.0028 per input image.
    fn default() -> Self {
        Self { per_million_tokens: 2_500_000, per_image: 2_800, flat_per_call: BTreeMap::new() }
    }
}

impl CostRates {
    /// Per-call stage prices of the reference cost breakdown: proposal and
    /// each refinement $0.0128, summarization $0.02581, verification
    /// $0.02381.
    pub fn reference_flat() -> Self {
        let mut flat = BTreeMap::new();
        flat.insert(Stage::Proposal, 12_800);
        flat.insert(Stage::Refinement, 12_800);
        flat.insert(Stage::Summarization, 25_810);
        flat.insert(Stage::Verification, 23_810);
        Self { flat_per_call: flat, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCost {
    pub calls: u64,
    pub text_tokens: u64,
    pub images: u64,
    pub micro_dollars: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub stages: BTreeMap<Stage, StageCost>,
    pub totals: StageCost,
    pub n_total: u64,
    pub n_success: u64,
    pub cost_per_trajectory: Option<u64>,
    pub cost_per_success: Option<u64>,
}

fn div_round(num: u128, den: u128) -> u64 {
    ((num + den / 2) / den) as u64
}

/// Stage dollars are computed per stage and rounded to the micro-dollar;
/// totals are exact column sums of the stage rows.
pub fn cost_report(usage: &UsageByStage, rates: &CostRates, n_total: u64, n_success: u64) -> CostLedger {
    let mut stages = BTreeMap::new();
    let mut totals = StageCost::default();
    for (stage, u) in usage {
        let text_tokens = u.usage.text_tokens();
        let micro = match rates.flat_per_call.get(stage) {
            Some(flat) => u.calls * flat,
            None => {
                div_round(u128::from(text_tokens) * u128::from(rates.per_million_tokens), 1_000_000)
                    + u.usage.images * rates.per_image
            }
        };
        let row = StageCost { calls: u.calls, text_tokens, images: u.usage.images, micro_dollars: micro };
        totals.calls += row.calls;
        totals.text_tokens += row.text_tokens;
        totals.images += row.images;
        totals.micro_dollars += row.micro_dollars;
        stages.insert(*stage, row);
    }
    let per = |n: u64| (n > 0).then(|| div_round(u128::from(totals.micro_dollars), u128::from(n)));
    CostLedger {
        stages,
        totals,
        n_total,
        n_success,
        cost_per_trajectory: per(n_total),
        cost_per_success: per(n_success),
    }
}

/// `$d.ddd`, rounded half up.
pub fn format_dollars(micro: u64) -> String {
    let milli = (micro + 500) / 1000;
    format!("${}.{:03}", milli / 1000, milli % 1000)
}
