#![allow(dead_code)]

pub mod batch;
pub mod oracle;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use trajsynth_core::datastore::{Datastore, TrajectoryRecord};
use trajsynth_core::env::FixtureEnv;
use trajsynth_core::llm::{ScriptEntry, SequenceBackend, Stage};
use trajsynth_core::orchestrator::{run_trajectory, RunConfig, SeedSpec};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn shop_dir() -> PathBuf {
    fixtures().join("shop")
}

pub fn shop_env() -> FixtureEnv {
    FixtureEnv::load(&shop_dir()).expect("fixture shop loads")
}

pub fn success_transcripts() -> PathBuf {
    fixtures().join("transcripts").join("shop-success")
}

/// A proposer/refiner answer in the documented output shape.
pub fn payload(task: &str, nl: &str, grounded: &str) -> String {
    let obj = serde_json::json!({
        "task": task,
        "action_in_natural_language": nl,
        "grounded_action": grounded,
    });
    format!("Looking at the page.\n\nIn summary, the next action I will perform is ```{obj}```")
}

pub fn summary(task: &str) -> String {
    format!("The actions lead to a clear goal.\n\nIn summary, the answer is: ```{task}```")
}

pub fn verdict(success: bool) -> String {
    let s = if success { "success" } else { "failure" };
    format!("Thoughts: The final page was checked against the intent.\nStatus: \"{s}\"")
}

/// Script for a run that executes `actions` in order (the first from the
/// proposer), then has the refiner stop, then summarizes and verifies.
pub struct Plan {
    pub actions: Vec<String>,
    pub stop: bool,
    pub success: bool,
}

impl Plan {
    pub fn new(actions: &[&str]) -> Self {
        Self { actions: actions.iter().map(|a| a.to_string()).collect(), stop: true, success: true }
    }

    pub fn failing(mut self) -> Self {
        self.success = false;
        self
    }

    pub fn script(&self, task: &str) -> BTreeMap<Stage, Vec<ScriptEntry>> {
        let entry = |text: String| ScriptEntry { text, usage: None };
        let mut s = BTreeMap::new();
        let (first, rest) = self.actions.split_first().expect("plan has an action");
        s.insert(Stage::Proposal, vec![entry(payload(task, &format!("Do {first}"), first))]);
        let mut refine: Vec<_> = rest
            .iter()
            .enumerate()
            .map(|(i, a)| entry(payload(&format!("{task}, part {}", i + 2), &format!("Do {a}"), a)))
            .collect();
        if self.stop {
            refine.push(entry(payload(task, "Stop here", "stop")));
        }
        s.insert(Stage::Refinement, refine);
        s.insert(Stage::Summarization, vec![entry(summary(&format!("{task} on Fjord Home")))]);
        s.insert(Stage::Verification, vec![entry(verdict(self.success))]);
        s
    }
}

pub fn run_plan(env: &FixtureEnv, seed: &str, id: &str, plan: &Plan, cfg: &RunConfig) -> trajsynth_core::Trajectory {
    let backend = SequenceBackend::new(plan.script(&format!("Task {id}")));
    run_trajectory(&SeedSpec::new(seed), id, env, &backend, cfg)
}

/// Scroll actions alternating down and up.
pub fn scrolls(n: usize) -> Vec<&'static str> {
    (0..n).map(|i| if i % 2 == 0 { "scroll [down]" } else { "scroll [up]" }).collect()
}

fn with_scrolls(n: usize, tail: &[&'static str]) -> Vec<&'static str> {
    let mut v = scrolls(n);
    v.extend_from_slice(tail);
    v
}

/// Ten success trajectories whose scroll counts are 0,1,2,3,4,0,1,2,3,4.
pub fn build_scroll_dataset(dir: &Path) -> Vec<TrajectoryRecord> {
    let env = shop_env();
    let cfg = RunConfig::default();
    let store = Datastore::new(dir);
    let tails: [&[&str]; 2] = [&["type [3] [sofa]", "click [7]", "click [9]"], &["click [1]"]];
    let mut out = Vec::new();
    for i in 0..10 {
        let actions = with_scrolls(i % 5, tails[i / 5]);
        let t = run_plan(&env, "fixture://shop/home", &format!("s{i:02}"), &Plan::new(&actions), &cfg);
        assert!(t.record.is_success(), "{}: {:?}", t.record.id, t.record.status_detail);
        out.push(store.persist(&t).expect("persist"));
    }
    out
}

/// Ten trajectories of mixed outcome over several entry pages.
pub fn build_mixed_dataset(dir: &Path) -> Vec<TrajectoryRecord> {
    let env = shop_env();
    let cfg = RunConfig::default();
    let store = Datastore::new(dir);
    let plans: Vec<(&str, Plan)> = vec![
        ("fixture://shop/home", Plan::new(&["type [3] [sofa]", "click [7]", "select [7] [beige]", "click [9]"])),
        ("fixture://shop/home", Plan::new(&["scroll [down]", "click [14]"])),
        ("fixture://shop/sofas", Plan::new(&["select [7] [Price: low to high]", "click [9]", "click [8]"])),
        ("fixture://shop/home#top", Plan::new(&["click [8]", "scroll [down]", "click [12]"]).failing()),
        ("fixture://shop/deals", Plan::new(&["click [8]", "click [8]"])),
        ("fixture://shop/cart", Plan::new(&["click [9]", "type [8] [Storgatan 1]", "select [11] [express]"])),
        ("fixture://shop/home", Plan::new(&["type [3] [laptop]", "click [7]"]).failing()),
        ("fixture://shop/help", Plan::new(&["click [7]", "click [8]", "scroll [down]", "scroll [up]", "click [9]"])),
        ("fixture://shop/uppland", Plan::new(&["select [7] [dark blue]", "scroll [down]"])),
        ("fixture://shop/home", Plan { actions: vec!["stop".into()], stop: false, success: false }),
    ];
    let mut out = Vec::new();
    for (i, (seed, plan)) in plans.iter().enumerate() {
        let t = run_plan(&env, seed, &format!("m{i:02}"), plan, &cfg);
        out.push(store.persist(&t).expect("persist"));
    }
    out
}
