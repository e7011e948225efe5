use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::agents::{Verdict, VerdictStatus};
use crate::llm::UsageByStage;
use crate::orchestrator::SeedSpec;
use crate::page::{PageObservation, Viewport};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryStatus {
    Success,
    Failure,
    /// The proposer refused the landing page.
    Halted,
    /// A model answer could not be parsed or grounded.
    Malformed,
    /// Navigation, session or backend failure.
    EnvError,
}

impl TrajectoryStatus {
    pub const ALL: [TrajectoryStatus; 5] = [
        TrajectoryStatus::Success,
        TrajectoryStatus::Failure,
        TrajectoryStatus::Halted,
        TrajectoryStatus::Malformed,
        TrajectoryStatus::EnvError,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrajectoryStatus::Success => "success",
            TrajectoryStatus::Failure => "failure",
            TrajectoryStatus::Halted => "halted",
            TrajectoryStatus::Malformed => "malformed",
            TrajectoryStatus::EnvError => "env_error",
        }
    }
}

impl std::fmt::Display for TrajectoryStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which agent produced a step's action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOrigin {
    Proposal,
    Refinement,
    /// Search issued for a navigate-via-search seed.
    Search,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    /// Relative to the record directory.
    pub path: String,
    pub sha256: String,
}

/// One executed action and the page it was issued on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub ordinal: u32,
    pub origin: StepOrigin,
    pub url: String,
    pub viewport: Viewport,
    pub scroll_y: u32,
    pub element_count: u32,
    pub refined_task: String,
    pub action_nl: String,
    pub grounded: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    pub pre_digest: String,
    pub post_digest: String,
    /// Filled when persisted.
    #[serde(default)]
    pub artifacts: BTreeMap<String, ArtifactRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalPage {
    pub url: String,
    pub digest: String,
    #[serde(default)]
    pub artifacts: BTreeMap<String, ArtifactRef>,
}

/// Wall-clock microseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timings {
    pub started_us: u64,
    pub finished_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_opened_us: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_closed_us: Option<u64>,
}

pub fn now_us() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub schema_version: u32,
    pub id: String,
    pub seed: SeedSpec,
    pub status: TrajectoryStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status_detail: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_task: Option<String>,
    pub steps: Vec<StepRecord>,
    #[serde(default)]
    pub summary_task: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub summary_warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default)]
    pub usage: UsageByStage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_page: Option<FinalPage>,
    #[serde(default)]
    pub timings: Timings,
}

impl TrajectoryRecord {
    pub fn new(id: impl Into<String>, seed: SeedSpec) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            id: id.into(),
            seed,
            status: TrajectoryStatus::EnvError,
            status_detail: None,
            initial_task: None,
            steps: Vec::new(),
            summary_task: String::new(),
            summary_warnings: Vec::new(),
            verdict: None,
            usage: UsageByStage::new(),
            final_page: None,
            timings: Timings::default(),
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == TrajectoryStatus::Success
            && self.verdict.as_ref().is_some_and(|v| v.status == VerdictStatus::Success)
    }

    /// Scroll actions among the grounded actions.
    pub fn scroll_count(&self) -> usize {
        self.steps.iter().filter(|s| s.grounded.is_scroll()).count()
    }

    /// Checks the status/verdict and step-ordering invariants.
    pub fn check(&self) -> Result<(), String> {
        if self.status == TrajectoryStatus::Success && !self.is_success() {
            return Err("success status without a success verdict".into());
        }
        let may_be_empty = matches!(
            self.status,
            TrajectoryStatus::Halted | TrajectoryStatus::Malformed | TrajectoryStatus::EnvError
        );
        if self.steps.is_empty() && !may_be_empty {
            return Err(format!("{} record without steps", self.status));
        }
        for (i, s) in self.steps.iter().enumerate() {
            if s.ordinal as usize != i {
                return Err(format!("step {i} has ordinal {}", s.ordinal));
            }
        }
        Ok(())
    }
}

/// A record with the observations its artifacts are written from: one
/// pre-action observation per step plus the page after the last step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub record: TrajectoryRecord,
    pub observations: Vec<PageObservation>,
    pub final_observation: Option<PageObservation>,
}
