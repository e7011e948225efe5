//! Synthesizes web-navigation trajectories by letting a task proposer, a
//! refiner, a summarizer and a verifier drive a browser session, and scores
//! agents on the resulting data.

pub mod action;
pub mod agents;
pub mod datastore;
pub mod env;
pub mod llm;
pub mod metrics;
pub mod orchestrator;
pub mod page;
pub mod util;

pub use action::{parse_action, render_action, Action, ActionError, AgentPayload, ElementIndex, ScrollDirection};
pub use agents::{AgentConfig, AgentError, Agents, TaskState, Verdict, VerdictStatus};
pub use datastore::{Datastore, DatastoreError, Trajectory, TrajectoryRecord, TrajectoryStatus};
pub use env::{Blocklist, CdpEnv, EnvError, Environment, FixtureEnv, Session};
pub use llm::{ChatBackend, ChatRequest, ChatResponse, LlmError, Stage, Usage, UsageByStage};
pub use metrics::{keynode_metrics, run_average, step_metrics, KeyNodeResult, MetricsError, StepEvalRecord};
pub use orchestrator::{filter_seeds, run_batch, run_trajectory, BatchReport, RunConfig, SeedSpec, SeedSource};
pub use page::{A11ySnapshot, BBox, ElementNode, PageObservation, Screenshot, Viewport};
