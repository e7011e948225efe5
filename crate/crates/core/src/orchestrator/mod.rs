//! Per-seed trajectory loop and the concurrent batch runner.

mod seeds;

pub use seeds::{domain_key, filter_seeds, AllowRules, SeedFilterReport};

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Action, AgentPayload};
use crate::agents::{cap_screenshots, AgentConfig, AgentError, Agents, TaskState, VerdictStatus};
use crate::datastore::{
    cost_report, now_us, CostLedger, CostRates, Datastore, DatastoreError, FinalPage, StepOrigin, StepRecord,
    Trajectory, TrajectoryRecord, TrajectoryStatus,
};
use crate::env::{Blocklist, EnvError, Environment, Guarded, Session};
use crate::llm::{merge_usage, ChatBackend, MeteredClient, UsageAccumulator, UsageByStage};
use crate::page::{render_markdown, PageObservation, Viewport};
use crate::util::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedSource {
    Toplist,
    Headlist,
    #[default]
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSpec {
    pub url: String,
    #[serde(default)]
    pub source: SeedSource,
    /// Reach the site through a search for the proposed task.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub via_search: bool,
}

impl SeedSpec {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into(), source: SeedSource::Custom, via_search: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub max_steps: usize,
    pub parallelism: usize,
    pub viewport: Viewport,
    /// Concurrent sessions allowed per registrable domain.
    pub domain_cap: usize,
    pub blocklist_path: Option<PathBuf>,
    #[serde(skip)]
    pub blocklist: Blocklist,
    pub reasoning: bool,
    pub rates: CostRates,
    pub agent: AgentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_steps: 15,
            parallelism: 60,
            viewport: Viewport::default(),
            domain_cap: 2,
            blocklist_path: None,
            blocklist: Blocklist::default(),
            reasoning: false,
            rates: CostRates::default(),
            agent: AgentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OrchestratorError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    DatastoreUnavailable(#[from] DatastoreError),
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: &str| Err(OrchestratorError::InvalidConfig(m.into()));
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1");
        }
        if self.domain_cap == 0 {
            return bad("domain_cap must be at least 1");
        }
        if self.viewport.width == 0 || self.viewport.height == 0 {
            return bad("viewport must be non-empty");
        }
        Ok(())
    }
}

/// `{seq:05}-{first 8 hex of sha256(url)}`.
pub fn record_id(seq: usize, url: &str) -> String {
    format!("{seq:05}-{}", &sha256_hex(url)[..8])
}

struct Run<'a> {
    rec: TrajectoryRecord,
    observations: Vec<PageObservation>,
    agents: Agents<'a>,
    cfg: &'a RunConfig,
}

/// Why the loop ended without a verdict.
struct Abort(TrajectoryStatus, String);

fn agent_abort(e: AgentError) -> Abort {
    let status = match &e {
        AgentError::PolicyHalt => TrajectoryStatus::Halted,
        AgentError::Llm(_) => TrajectoryStatus::EnvError,
        _ => TrajectoryStatus::Malformed,
    };
    Abort(status, e.to_string())
}

fn env_abort(e: EnvError) -> Abort {
    Abort(TrajectoryStatus::EnvError, e.to_string())
}

impl Run<'_> {
    /// Executes one action and records it as a step. Returns the page after.
    fn step(
        &mut self,
        session: &mut dyn Session,
        state: &mut TaskState,
        pre: PageObservation,
        origin: StepOrigin,
        payload: &AgentPayload,
    ) -> Result<PageObservation, Abort> {
        let result = session.execute(&payload.grounded).map_err(env_abort)?;
        if !result.ok {
            let e = result.error.map(|e| e.to_string()).unwrap_or_else(|| "action failed".into());
            return Err(Abort(TrajectoryStatus::EnvError, format!("{}: {e}", payload.grounded)));
        }
        let post = session.observe().map_err(env_abort)?;
        let reasoning = if self.cfg.reasoning {
            match self.agents.generate_reasoning(&payload.grounded, &payload.task, &pre, &state.nl_actions()) {
                Ok(r) => Some(r),
                Err(e) => {
                    tracing::warn!(id = %self.rec.id, error = %e, "reasoning generation failed");
                    None
                }
            }
        } else {
            None
        };
        self.rec.steps.push(StepRecord {
            ordinal: self.rec.steps.len() as u32,
            origin,
            url: pre.url.clone(),
            viewport: pre.a11y.viewport,
            scroll_y: pre.a11y.scroll_y,
            element_count: pre.a11y.elements.len() as u32,
            refined_task: payload.task.clone(),
            action_nl: payload.action_nl.clone(),
            grounded: payload.grounded.clone(),
            reasoning,
            pre_digest: pre.digest.clone(),
            post_digest: post.digest.clone(),
            artifacts: BTreeMap::new(),
        });
        state.apply(payload, pre.digest.clone());
        self.observations.push(pre);
        Ok(post)
    }

    /// Proposal, then refinement until stop, budget or rejection. Returns
    /// the final page.
    fn explore(&mut self, session: &mut dyn Session, seed: &SeedSpec) -> Result<PageObservation, Abort> {
        let first = session.observe().map_err(env_abort)?;
        let proposal = self.agents.propose(&first, &seed.url).map_err(agent_abort)?;
        self.rec.initial_task = Some(proposal.task.clone());
        let mut state = TaskState::new(proposal.task.clone());
        let (mut pending, mut origin) = if seed.via_search {
            let search = AgentPayload {
                task: proposal.task.clone(),
                action_nl: format!("Search Google for {}", proposal.task),
                grounded: Action::SearchGoogle { query: proposal.task.clone() },
            };
            (search, StepOrigin::Search)
        } else {
            (proposal, StepOrigin::Proposal)
        };
        let mut page = first;
        let mut refinements = 0;
        loop {
            page = self.step(session, &mut state, page, origin, &pending)?;
            if refinements >= self.cfg.max_steps {
                break;
            }
            refinements += 1;
            match self.agents.refine(&state, &page, &seed.url) {
                Ok(p) if p.grounded.is_stop() => break,
                Ok(p) => {
                    pending = p;
                    origin = StepOrigin::Refinement;
                }
                Err(AgentError::RepeatActionRejected) => {
                    tracing::info!(id = %self.rec.id, "repeated action on unchanged page, ending exploration");
                    break;
                }
                Err(e) => return Err(agent_abort(e)),
            }
        }
        Ok(page)
    }

    /// Summarizes and verifies; a malformed verdict gets one more try.
    fn judge(&mut self, seed: &SeedSpec, final_page: &PageObservation) -> Result<(), Abort> {
        let actions: Vec<String> = self.rec.steps.iter().map(|s| s.action_nl.clone()).collect();
        let shots: Vec<_> = self.observations.iter().map(|o| o.screenshot.clone()).collect();
        let shots = cap_screenshots(&shots, &final_page.screenshot, self.cfg.agent.max_step_screenshots);
        let summary = self.agents.summarize(&actions, &shots, &seed.url).map_err(agent_abort)?;
        self.rec.summary_task = summary.task.clone();
        self.rec.summary_warnings = summary.warnings;
        let markdown = render_markdown(&final_page.html).unwrap_or_default();
        let mut attempt = 0;
        let verdict = loop {
            match self.agents.verify(&summary.task, &actions, &shots, &markdown) {
                Ok(v) => break v,
                Err(AgentError::MalformedVerdict) if attempt == 0 => attempt += 1,
                Err(e) => return Err(agent_abort(e)),
            }
        };
        self.rec.status = match verdict.status {
            VerdictStatus::Success => TrajectoryStatus::Success,
            VerdictStatus::Failure => TrajectoryStatus::Failure,
        };
        self.rec.verdict = Some(verdict);
        Ok(())
    }
}

/// Runs one seed to completion. Never fails: problems end up in the
/// record's status.
pub fn run_trajectory(
    seed: &SeedSpec,
    id: &str,
    env: &dyn Environment,
    backend: &dyn ChatBackend,
    cfg: &RunConfig,
) -> Trajectory {
    let usage = UsageAccumulator::new();
    let mut run = Run {
        rec: TrajectoryRecord::new(id, seed.clone()),
        observations: Vec::new(),
        agents: Agents::new(MeteredClient::new(backend, &usage), cfg.agent),
        cfg,
    };
    run.rec.timings.started_us = now_us();
    let mut final_observation = None;
    let outcome = match env.open(&seed.url, cfg.viewport) {
        Err(e) => Err(env_abort(e)),
        Ok(mut session) => {
            run.rec.timings.session_opened_us = Some(now_us());
            let explored = run.explore(session.as_mut(), seed);
            session.close();
            run.rec.timings.session_closed_us = Some(now_us());
            explored.and_then(|page| {
                run.rec.final_page = Some(FinalPage {
                    url: page.url.clone(),
                    digest: page.digest.clone(),
                    artifacts: BTreeMap::new(),
                });
                let judged = run.judge(seed, &page);
                final_observation = Some(page);
                judged
            })
        }
    };
    if let Err(Abort(status, detail)) = outcome {
        run.rec.status = status;
        run.rec.status_detail = Some(detail);
    }
    if run.rec.status != TrajectoryStatus::Success && run.rec.status != TrajectoryStatus::Failure {
        run.rec.verdict = None;
    }
    run.rec.usage = usage.snapshot();
    run.rec.timings.finished_us = now_us();
    Trajectory { record: run.rec, observations: run.observations, final_observation }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub records: usize,
    pub by_status: BTreeMap<TrajectoryStatus, usize>,
    pub ids: Vec<String>,
    pub wall_ms: u64,
    pub max_concurrency: usize,
    pub usage: UsageByStage,
    pub cost: CostLedger,
}

struct Gate {
    pending: VecDeque<(usize, SeedSpec, String)>,
    active: HashMap<String, usize>,
}

/// Runs all seeds with at most `parallelism` concurrent trajectories and at
/// most `domain_cap` concurrent sessions per registrable domain. Workers
/// take the first queued seed whose domain has room. Only an unwritable
/// datastore aborts the batch.
pub fn run_batch<I>(
    seeds: I,
    env: &dyn Environment,
    backend: &dyn ChatBackend,
    store: &Datastore,
    cfg: &RunConfig,
) -> Result<BatchReport, OrchestratorError>
where
    I: IntoIterator<Item = SeedSpec>,
{
    cfg.validate()?;
    store.probe()?;
    let started = Instant::now();
    let guarded = Guarded::new(env, cfg.blocklist.clone());
    let pending: VecDeque<_> = seeds
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let d = domain_key(&s.url);
            (i, s, d)
        })
        .collect();
    let workers = cfg.parallelism.min(pending.len());
    let gate = Mutex::new(Gate { pending, active: HashMap::new() });
    let wake = Condvar::new();
    let running = AtomicUsize::new(0);
    let high_water = AtomicUsize::new(0);
    let fatal: Mutex<Option<DatastoreError>> = Mutex::new(None);
    let stop = AtomicBool::new(false);
    let done: Mutex<Vec<TrajectoryRecord>> = Mutex::new(Vec::new());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let (seq, seed, domain) = {
                    let mut g = gate.lock().unwrap_or_else(|e| e.into_inner());
                    loop {
                        if stop.load(Ordering::SeqCst) || g.pending.is_empty() {
                            wake.notify_all();
                            return;
                        }
                        let active = &g.active;
                        let pos = g
                            .pending
                            .iter()
                            .position(|(_, _, d)| active.get(d).copied().unwrap_or(0) < cfg.domain_cap);
                        if let Some(pos) = pos {
                            let item = g.pending.remove(pos).expect("position is in range");
                            *g.active.entry(item.2.clone()).or_insert(0) += 1;
                            break item;
                        }
                        g = wake.wait(g).unwrap_or_else(|e| e.into_inner());
                    }
                };
                let now = running.fetch_add(1, Ordering::SeqCst) + 1;
                high_water.fetch_max(now, Ordering::SeqCst);
                let id = record_id(seq, &seed.url);
                let t = run_trajectory(&seed, &id, &guarded, backend, cfg);
                running.fetch_sub(1, Ordering::SeqCst);
                {
                    let mut g = gate.lock().unwrap_or_else(|e| e.into_inner());
                    if let Some(n) = g.active.get_mut(&domain) {
                        *n -= 1;
                    }
                    wake.notify_all();
                }
                match store.persist(&t) {
                    Ok(rec) => done.lock().unwrap_or_else(|e| e.into_inner()).push(rec),
                    Err(e @ (DatastoreError::Io(_) | DatastoreError::Unavailable(_))) => {
                        tracing::error!(%id, error = %e, "datastore write failed, stopping batch");
                        fatal.lock().unwrap_or_else(|e| e.into_inner()).get_or_insert(e);
                        stop.store(true, Ordering::SeqCst);
                        wake.notify_all();
                        return;
                    }
                    Err(e) => tracing::error!(%id, error = %e, "record rejected by datastore"),
                }
            });
        }
    });

    if let Some(e) = fatal.into_inner().unwrap_or_else(|e| e.into_inner()) {
        return Err(OrchestratorError::DatastoreUnavailable(e));
    }
    let mut records = done.into_inner().unwrap_or_else(|e| e.into_inner());
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let mut by_status = BTreeMap::new();
    let mut usage = UsageByStage::new();
    for r in &records {
        *by_status.entry(r.status).or_insert(0) += 1;
        merge_usage(&mut usage, &r.usage);
    }
    let n_success = records.iter().filter(|r| r.is_success()).count() as u64;
    let cost = cost_report(&usage, &cfg.rates, records.len() as u64, n_success);
    Ok(BatchReport {
        records: records.len(),
        by_status,
        ids: records.into_iter().map(|r| r.id).collect(),
        wall_ms: started.elapsed().as_millis() as u64,
        max_concurrency: high_water.into_inner(),
        usage,
        cost,
    })
}
