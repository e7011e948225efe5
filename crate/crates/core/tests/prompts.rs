mod common;

use std::sync::Mutex;

use common::{shop_env, Plan};
use regex::Regex;
use trajsynth_core::agents::prompts::{
    PROPOSER_SYSTEM, REFINER_SYSTEM, SUMMARIZER_SYSTEM, TRAINING_SYSTEM, VERIFIER_SYSTEM,
};
use trajsynth_core::llm::{ChatBackend, ChatRequest, ChatResponse, LlmError, SequenceBackend, Stage, UserPart};
use trajsynth_core::orchestrator::{run_trajectory, RunConfig, SeedSpec};

struct Capture {
    inner: SequenceBackend,
    seen: Mutex<Vec<(Stage, ChatRequest)>>,
}

impl ChatBackend for Capture {
    fn complete(&self, req: &ChatRequest, stage: Stage) -> Result<ChatResponse, LlmError> {
        self.seen.lock().unwrap().push((stage, req.clone()));
        self.inner.complete(req, stage)
    }
}

fn text_of(req: &ChatRequest) -> String {
    req.user_parts
        .iter()
        .filter_map(|p| match p {
            UserPart::Text(t) => Some(t.as_str()),
            UserPart::Image(_) => None,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn captured_run() -> Vec<(Stage, ChatRequest)> {
    let plan = Plan::new(&["type [3] [sofa]", "click [7]", "scroll [down]"]);
    let backend = Capture { inner: SequenceBackend::new(plan.script("Find a sofa")), seen: Mutex::new(Vec::new()) };
    let t = run_trajectory(
        &SeedSpec::new("fixture://shop/home"),
        "p1",
        &shop_env(),
        &backend,
        &RunConfig::default(),
    );
    assert!(t.record.is_success(), "{:?}", t.record.status_detail);
    backend.seen.into_inner().unwrap()
}

#[test]
fn templates_keep_their_wording() {
    let sentinels = [
        (PROPOSER_SYSTEM, "Imagine you are a real user on this webpage. Given the webpage screenshot and parsed HTML/accessibility tree, please provide a single task"),
        (REFINER_SYSTEM, "and your overall task is {OVERALL_TASK}. This is the list of actions you have performed that lead to the current page {PREV_ACTION_LIST}."),
        (SUMMARIZER_SYSTEM, "Your task is to come up with a single task description that will be accomplished by performing these actions in the given sequence on the website."),
        (VERIFIER_SYSTEM, "You are an expert in evaluating the performance of a web navigation agent."),
        (TRAINING_SYSTEM, "If you decide to click somewhere, you should choose the numeric element index closest to the location you want to click."),
    ];
    for (template, needle) in sentinels {
        assert!(template.contains(needle), "missing: {needle}");
    }
    for template in [PROPOSER_SYSTEM, REFINER_SYSTEM] {
        for verb in ["click [", "type [", "scroll [", "stop"] {
            assert!(template.contains(verb), "{verb} missing from an agent template");
        }
    }
}

#[test]
fn every_request_is_fully_filled() {
    let placeholder = Regex::new(r"\{[A-Z][A-Z_ ]*\}").unwrap();
    let seen = captured_run();
    let stages: Vec<Stage> = seen.iter().map(|(s, _)| *s).collect();
    assert_eq!(
        stages,
        [
            Stage::Proposal,
            Stage::Refinement,
            Stage::Refinement,
            Stage::Refinement,
            Stage::Summarization,
            Stage::Verification
        ]
    );
    for (stage, req) in &seen {
        let all = req.all_text();
        assert!(!placeholder.is_match(&all), "{stage:?} has an unfilled placeholder");
    }
}

#[test]
fn stage_inputs_carry_the_expected_context() {
    let seen = captured_run();
    let (_, proposal) = &seen[0];
    assert_eq!(proposal.system, PROPOSER_SYSTEM.trim_end());
    let user = text_of(proposal);
    assert!(user.contains("Website URL: fixture://shop/home"));
    assert!(user.contains("[3] [searchbox] [Search products]"), "{user}");
    assert_eq!(proposal.image_count(), 1);

    let (_, last_refine) = &seen[3];
    assert!(last_refine.system.contains("Find a sofa, part 3"));
    assert!(last_refine.system.contains("1. Do type [3] [sofa]"), "{}", last_refine.system);
    assert!(last_refine.system.contains("2. Do click [7]"));
    assert_eq!(last_refine.image_count(), 1);

    let (_, summary) = &seen[4];
    assert!(summary.all_text().contains("fixture://shop/home"));
    assert!(summary.all_text().contains("Do scroll [down]"));
    assert_eq!(summary.image_count(), 4, "three step screenshots and the final page");

    let (_, verify) = &seen[5];
    let user = text_of(verify);
    assert!(user.contains("User Intent: Find a sofa on Fjord Home"), "{user}");
    assert!(user.contains("Bot response to the user: N/A"));
    assert!(user.contains("Cart (0)"), "final page markdown is included");
    assert_eq!(verify.image_count(), 4);
}
